use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbpConfig {
    pub radius: usize,
    pub neighbors: usize,
    /// Cells per side of the histogram grid.
    pub grid: usize,
}

impl Default for LbpConfig {
    fn default() -> Self {
        LbpConfig {
            radius: 1,
            neighbors: 8,
            grid: 8,
        }
    }
}

impl LbpConfig {
    pub fn descriptor_len(&self) -> usize {
        self.grid * self.grid * (1 << self.neighbors)
    }
}

/// Neighbour offsets, clockwise from the top-left. The first neighbour is the
/// most significant bit of the code.
pub const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];

pub(crate) fn require_gray(img: &Raster) -> Result<()> {
    if !img.is_gray() {
        return Err(Error::InvalidInput(format!(
            "descriptor needs a gray image, got {} channels",
            img.channels()
        )));
    }
    Ok(())
}

/// 8-neighbour code of an interior pixel. A bit is set when the neighbour is
/// strictly brighter than the centre, so ties give 0.
#[inline]
pub fn lbp_code(img: &Raster, x: usize, y: usize) -> u8 {
    let c = img.get(x, y, 0);
    let mut code = 0u8;
    for &(dx, dy) in &NEIGHBORS {
        let n = img.get((x as isize + dx) as usize, (y as isize + dy) as usize, 0);
        code = (code << 1) | u8::from(n > c);
    }
    code
}

/// Per-cell 256-bin histograms of interior-pixel codes, each normalized to
/// unit L1 mass, concatenated row by row.
pub fn lbp_descriptor(img: &Raster, cfg: &LbpConfig) -> Result<Vec<f64>> {
    require_gray(img)?;
    if cfg.radius != 1 || cfg.neighbors != 8 {
        return Err(Error::InvalidInput("only radius 1 with 8 neighbours is supported".into()));
    }
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 || cfg.grid == 0 || cfg.grid > w.min(h) {
        return Err(Error::InvalidInput(format!("image {}x{} too small for LBP", w, h)));
    }
    let bins = 1usize << cfg.neighbors;
    let g = cfg.grid;
    let mut hist = vec![0.0f64; g * g * bins];
    let mut counts = vec![0usize; g * g];
    for y in 1..h - 1 {
        let cy = y * g / h;
        for x in 1..w - 1 {
            let cx = x * g / w;
            let cell = cy * g + cx;
            hist[cell * bins + lbp_code(img, x, y) as usize] += 1.0;
            counts[cell] += 1;
        }
    }
    for (cell, &n) in counts.iter().enumerate() {
        if n > 0 {
            for v in &mut hist[cell * bins..(cell + 1) * bins] {
                *v /= n as f64;
            }
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook 3x3 reference: explicit window, weights 128..1 clockwise from top-left.
    fn oracle_code(img: &Raster, x: usize, y: usize) -> u8 {
        let w = [
            [(x - 1, y - 1, 128u32), (x, y - 1, 64), (x + 1, y - 1, 32)],
            [(x - 1, y, 1), (x, y, 0), (x + 1, y, 16)],
            [(x - 1, y + 1, 2), (x, y + 1, 4), (x + 1, y + 1, 8)],
        ];
        let c = img.get(x, y, 0);
        let mut code = 0u32;
        for row in w {
            for (px, py, weight) in row {
                if weight > 0 && img.get(px, py, 0) > c {
                    code += weight;
                }
            }
        }
        code as u8
    }

    #[test]
    fn constant_image_unit_mass_at_zero() {
        let d = lbp_descriptor(&Raster::filled(64, 64, 1, 77), &LbpConfig::default()).unwrap();
        assert_eq!(d.len(), LbpConfig::default().descriptor_len());
        for cell in d.chunks(256) {
            assert_eq!(cell[0], 1.0);
            assert!(cell[1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn l1_norm_is_cell_count() {
        let img = Raster::gray_from_fn(256, 256, |x, y| ((x * x + 3 * y) % 251) as u8);
        let d = lbp_descriptor(&img, &LbpConfig::default()).unwrap();
        let total: f64 = d.iter().sum();
        assert!((total - 64.0).abs() < 1e-9);
    }

    #[test]
    fn step_edge_codes_match_oracle() {
        let img = Raster::gray_from_fn(12, 9, |x, _| if x < 6 { 40 } else { 200 });
        for y in 1..8 {
            for x in 1..11 {
                assert_eq!(lbp_code(&img, x, y), oracle_code(&img, x, y), "({x},{y})");
            }
        }
        // Just left of the edge the three right-hand neighbours are brighter.
        assert_eq!(lbp_code(&img, 5, 4), 0b0011_1000);
        let tex = Raster::gray_from_fn(20, 20, |x, y| ((x * 37 + y * 11 + x * y) % 256) as u8);
        for y in 1..19 {
            for x in 1..19 {
                assert_eq!(lbp_code(&tex, x, y), oracle_code(&tex, x, y));
            }
        }
    }

    #[test]
    fn color_rejected() {
        assert!(lbp_descriptor(&Raster::zeros(16, 16, 3), &LbpConfig::default()).is_err());
    }
}
