//! 8-bit pixel rasters with one (gray) or three (RGB) interleaved channels.

use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Raster {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        let mut r = Self::zeros(width, height, channels);
        r.data.fill(value);
        r
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} bytes for a {width}x{height}x{channels} raster",
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    /// Gray raster whose pixel `(x, y)` is `f(x, y)`.
    pub fn gray_from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Raster {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// `"WxHxC"`, used in diagnostics.
    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// One channel as a row-major `f64` plane.
    pub fn plane_f64(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .map(|&v| f64::from(v))
            .collect()
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Raster::from_vec(w as usize, h as usize, 1, g.into_raw())?
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Raster::from_vec(w as usize, h as usize, 3, rgb.into_raw())?
            }
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.channels == 1 {
            let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(w, h, self.data.clone())
                .expect("buffer length checked at construction");
            buf.save_with_format(path, image::ImageFormat::Png)
        } else {
            let buf: RgbImage = ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, self.data.clone())
                .expect("buffer length checked at construction");
            buf.save_with_format(path, image::ImageFormat::Png)
        };
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_gray_and_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let g = Raster::gray_from_fn(7, 5, |x, y| (x * 31 + y * 7) as u8);
        let mut rgb = Raster::zeros(4, 3, 3);
        rgb.set(1, 2, 2, 200);
        g.save_png(dir.path().join("g.png")).unwrap();
        rgb.save_png(dir.path().join("c.png")).unwrap();
        assert_eq!(Raster::load_png(dir.path().join("g.png")).unwrap(), g);
        assert_eq!(Raster::load_png(dir.path().join("c.png")).unwrap(), rgb);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Raster::from_vec(2, 2, 1, vec![0; 3]).is_err());
        assert!(Raster::from_vec(2, 2, 2, vec![0; 8]).is_err());
    }
}
