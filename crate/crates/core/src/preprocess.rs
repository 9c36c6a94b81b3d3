//! Geometric preparation of source images for the 256x256 translation networks.

use crate::dataset::DatasetKind;
use crate::error::{Error, Result};
use crate::raster::Raster;

pub const CANVAS: usize = 256;
pub const PERIOCULAR_W: usize = 640;
pub const PERIOCULAR_H: usize = 480;
pub const IRIS_W: usize = 512;
pub const IRIS_H: usize = 64;

/// Placement of the three 64-row iris strips inside the 256x256 canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackLayout {
    pub strip_widths: [usize; 3],
    pub strip_height: usize,
    pub row_offsets: [usize; 3],
    pub col_offsets: [usize; 3],
    pub canvas: usize,
}

pub const PACK_LAYOUT: PackLayout = PackLayout {
    strip_widths: [171, 171, 170],
    strip_height: IRIS_H,
    row_offsets: [32, 96, 160],
    col_offsets: [42, 42, 43],
    canvas: CANVAS,
};

impl PackLayout {
    /// First source column of each strip.
    pub fn source_starts(&self) -> [usize; 3] {
        let w = self.strip_widths;
        [0, w[0], w[0] + w[1]]
    }

    /// Canvas `(x, y)` of source pixel `(x, y)` of a 64x512 iris.
    pub fn canvas_coord(&self, x: usize, y: usize) -> (usize, usize) {
        let starts = self.source_starts();
        let s = (0..3).rev().find(|&s| x >= starts[s]).unwrap_or(0);
        (self.col_offsets[s] + x - starts[s], self.row_offsets[s] + y)
    }
}

fn check_dims(img: &Raster, w: usize, h: usize) -> Result<()> {
    if img.width() != w || img.height() != h {
        return Err(Error::Dimension {
            expected: format!("{w}x{h}"),
            actual: format!("{}x{}", img.width(), img.height()),
        });
    }
    Ok(())
}

/// Bilinear resampling with pixel-centre alignment: output pixel `i` samples
/// source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the border.
fn resize_bilinear(src: &dyn Fn(usize, usize, usize) -> f64, in_w: usize, in_h: usize, channels: usize, out_w: usize, out_h: usize) -> Raster {
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(out_w, in_w);
    let ys = taps(out_h, in_h);
    let mut out = Raster::zeros(out_w, out_h, channels);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..channels {
                let top = src(x0, y0, c) * (1.0 - fx) + src(x1, y0, c) * fx;
                let bot = src(x0, y1, c) * (1.0 - fx) + src(x1, y1, c) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                out.set(ox, oy, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Pads a 640x480 periocular image with 80 zero rows above and below and
/// downsamples the 640x640 square to 256x256.
pub fn squarify_periocular(img: &Raster) -> Result<Raster> {
    check_dims(img, PERIOCULAR_W, PERIOCULAR_H)?;
    let pad = (PERIOCULAR_W - PERIOCULAR_H) / 2;
    let src = |x: usize, y: usize, c: usize| -> f64 {
        if y < pad || y >= pad + PERIOCULAR_H {
            0.0
        } else {
            f64::from(img.get(x, y - pad, c))
        }
    };
    Ok(resize_bilinear(
        &src,
        PERIOCULAR_W,
        PERIOCULAR_W,
        img.channels(),
        CANVAS,
        CANVAS,
    ))
}

/// Cuts a 64x512 normalized iris into three strips and stacks them on a zero
/// 256x256 canvas, without resampling.
pub fn pack_iris_strips(img: &Raster) -> Result<Raster> {
    check_dims(img, IRIS_W, IRIS_H)?;
    let l = PACK_LAYOUT;
    let mut out = Raster::zeros(l.canvas, l.canvas, img.channels());
    let ch = img.channels();
    for (s, start) in l.source_starts().into_iter().enumerate() {
        let w = l.strip_widths[s];
        for y in 0..l.strip_height {
            let src = &img.data()[(y * IRIS_W + start) * ch..(y * IRIS_W + start + w) * ch];
            let row = l.row_offsets[s] + y;
            let dst_start = (row * l.canvas + l.col_offsets[s]) * ch;
            out.data_mut()[dst_start..dst_start + w * ch].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Inverse of [`pack_iris_strips`]; canvas pixels outside the strips are ignored.
pub fn unpack_iris_strips(img: &Raster) -> Result<Raster> {
    check_dims(img, CANVAS, CANVAS)?;
    let l = PACK_LAYOUT;
    let ch = img.channels();
    let mut out = Raster::zeros(IRIS_W, IRIS_H, ch);
    for (s, start) in l.source_starts().into_iter().enumerate() {
        let w = l.strip_widths[s];
        for y in 0..l.strip_height {
            let row = l.row_offsets[s] + y;
            let src_start = (row * l.canvas + l.col_offsets[s]) * ch;
            let dst = (y * IRIS_W + start) * ch;
            out.data_mut()[dst..dst + w * ch]
                .copy_from_slice(&img.data()[src_start..src_start + w * ch]);
        }
    }
    Ok(out)
}

/// BT.601 luma, `0.299 R + 0.587 G + 0.114 B` rounded to nearest.
/// Gray input is returned unchanged.
pub fn to_gray(img: &Raster) -> Raster {
    if img.is_gray() {
        return img.clone();
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Raster::from_vec(img.width(), img.height(), 1, data).expect("same geometry")
}

/// Brings a stored image to the 256x256 network canvas.
///
/// Periocular: 640x480 sources are squarified, 256x256 images (the synthetic
/// set) pass through. Iris: 64x512 strips are packed.
pub fn to_canvas(img: &Raster, kind: DatasetKind) -> Result<Raster> {
    match kind {
        DatasetKind::Periocular if img.width() == CANVAS && img.height() == CANVAS => Ok(img.clone()),
        DatasetKind::Periocular => squarify_periocular(img),
        DatasetKind::Iris => pack_iris_strips(img),
    }
}

/// Maps a canvas back to the source geometry (iris unpacking; periocular is unchanged).
pub fn from_canvas(img: &Raster, kind: DatasetKind) -> Result<Raster> {
    match kind {
        DatasetKind::Periocular => {
            check_dims(img, CANVAS, CANVAS)?;
            Ok(img.clone())
        }
        DatasetKind::Iris => unpack_iris_strips(img),
    }
}
