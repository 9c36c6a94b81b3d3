use serde::{Deserialize, Serialize};

use super::lbp::require_gray;
use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    /// Cell side in pixels.
    pub cell: usize,
    /// Block side in cells; blocks step by one cell.
    pub block: usize,
    /// Unsigned orientation bins over [0, 180) degrees, centred at `k * 180 / bins`.
    pub bins: usize,
    pub epsilon: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            cell: 16,
            block: 2,
            bins: 9,
            epsilon: 1e-6,
        }
    }
}

impl HogConfig {
    pub fn descriptor_len(&self, width: usize, height: usize) -> usize {
        let (cx, cy) = (width / self.cell, height / self.cell);
        if cx < self.block || cy < self.block {
            return 0;
        }
        (cx - self.block + 1) * (cy - self.block + 1) * self.block * self.block * self.bins
    }
}

/// Central-difference gradients (border pixels replicated), per-cell
/// orientation histograms with linear interpolation between neighbouring bin
/// centres, and L2-normalized overlapping blocks.
pub fn hog_descriptor(img: &Raster, cfg: &HogConfig) -> Result<Vec<f64>> {
    require_gray(img)?;
    let (w, h) = (img.width(), img.height());
    let (ncx, ncy) = (w / cfg.cell, h / cfg.cell);
    if cfg.bins == 0 || cfg.block == 0 || ncx < cfg.block || ncy < cfg.block {
        return Err(Error::InvalidInput(format!("image {w}x{h} too small for HOG")));
    }
    let px = |x: isize, y: isize| -> f64 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        f64::from(img.get(x, y, 0))
    };
    let bin_width = 180.0 / cfg.bins as f64;
    let mut cells = vec![0.0f64; ncx * ncy * cfg.bins];
    for y in 0..ncy * cfg.cell {
        for x in 0..ncx * cfg.cell {
            let (xi, yi) = (x as isize, y as isize);
            let gx = px(xi + 1, yi) - px(xi - 1, yi);
            let gy = px(xi, yi + 1) - px(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            if angle >= 180.0 {
                angle -= 180.0;
            }
            let pos = angle / bin_width;
            let b0 = pos.floor();
            let frac = pos - b0;
            let b0 = (b0 as usize) % cfg.bins;
            let b1 = (b0 + 1) % cfg.bins;
            let cell = ((y / cfg.cell) * ncx + x / cfg.cell) * cfg.bins;
            cells[cell + b0] += mag * (1.0 - frac);
            if frac > 0.0 {
                cells[cell + b1] += mag * frac;
            }
        }
    }
    let mut out = Vec::with_capacity(cfg.descriptor_len(w, h));
    let mut block = Vec::with_capacity(cfg.block * cfg.block * cfg.bins);
    for by in 0..=ncy - cfg.block {
        for bx in 0..=ncx - cfg.block {
            block.clear();
            for cy in by..by + cfg.block {
                for cx in bx..bx + cfg.block {
                    let c = (cy * ncx + cx) * cfg.bins;
                    block.extend_from_slice(&cells[c..c + cfg.bins]);
                }
            }
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + cfg.epsilon * cfg.epsilon).sqrt();
            out.extend(block.iter().map(|v| v / norm));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_zero() {
        let d = hog_descriptor(&Raster::filled(256, 256, 1, 90), &HogConfig::default()).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_length_for_256() {
        let cfg = HogConfig::default();
        // 16x16 cells, 15x15 blocks of 2x2 cells x 9 bins.
        assert_eq!(cfg.descriptor_len(256, 256), 15 * 15 * 36);
        let d = hog_descriptor(&Raster::filled(256, 256, 1, 1), &cfg).unwrap();
        assert_eq!(d.len(), 8100);
    }

    #[test]
    fn horizontal_ramp_votes_only_zero_degree_bin() {
        let img = Raster::gray_from_fn(256, 256, |x, _| x as u8);
        let cfg = HogConfig::default();
        let d = hog_descriptor(&img, &cfg).unwrap();
        for block in d.chunks(cfg.block * cfg.block * cfg.bins) {
            for cell in block.chunks(cfg.bins) {
                assert!(cell[0] > 0.0);
                assert!(cell[1..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn vertical_ramp_votes_ninety_degree_bin() {
        // 90 degrees is not a bin centre with 9 bins: it splits between bins 4 and 5.
        let img = Raster::gray_from_fn(64, 64, |_, y| (3 * y) as u8);
        let cfg = HogConfig::default();
        let d = hog_descriptor(&img, &cfg).unwrap();
        for cell in d.chunks(cfg.bins) {
            assert!((cell[4] - cell[5]).abs() < 1e-12 && cell[4] > 0.0);
            let others: f64 = cell.iter().enumerate().filter(|(i, _)| *i != 4 && *i != 5).map(|(_, v)| v).sum();
            assert_eq!(others, 0.0);
        }
    }

    #[test]
    fn blocks_are_unit_norm() {
        let img = Raster::gray_from_fn(64, 64, |x, y| ((x * 13 + y * 7 + x * y) % 256) as u8);
        let cfg = HogConfig::default();
        for block in hog_descriptor(&img, &cfg).unwrap().chunks(36) {
            let n: f64 = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
