//! Full-reference image quality: PSNR and Gaussian-window SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

fn check_same_shape(a: &Raster, b: &Raster) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {}",
            a.shape_string(),
            b.shape_string()
        )));
    }
    Ok(())
}

/// `10 log10(max^2 / MSE)` over every sample of both rasters.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Raster, b: &Raster, max_value: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    let mse = sse / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering of a row-major plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, p: &SsimParams) -> f64 {
    let k = gaussian_kernel(p.window, p.sigma);
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}

/// Mean SSIM over every 11x11 Gaussian window fully inside the image.
/// Color images average the per-channel values.
pub fn ssim(a: &Raster, b: &Raster, params: &SsimParams) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.width() < params.window || a.height() < params.window {
        return Err(Error::InvalidInput(format!(
            "image {} smaller than the {}x{} SSIM window",
            a.shape_string(),
            params.window,
            params.window
        )));
    }
    let ch = a.channels();
    let sum: f64 = (0..ch)
        .map(|c| ssim_plane(&a.plane_f64(c), &b.plane_f64(c), a.width(), a.height(), params))
        .sum();
    Ok(sum / ch as f64)
}

/// Mean and population standard deviation of PSNR and SSIM over a test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub count: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

impl QualityStats {
    /// Rejects infinite PSNR values: identical prediction and target means a
    /// pipeline bug (e.g. the target was fed back as the prediction).
    pub fn from_values(psnrs: &[f64], ssims: &[f64]) -> Result<Self> {
        if psnrs.is_empty() || psnrs.len() != ssims.len() {
            return Err(Error::InvalidInput(format!(
                "{} PSNR and {} SSIM values",
                psnrs.len(),
                ssims.len()
            )));
        }
        if let Some(i) = psnrs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("PSNR value #{i} (identical images)")));
        }
        if ssims.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SSIM values".into()));
        }
        let (psnr_mean, psnr_std) = mean_std(psnrs);
        let (ssim_mean, ssim_std) = mean_std(ssims);
        Ok(QualityStats {
            psnr_mean,
            psnr_std,
            ssim_mean,
            ssim_std,
            count: psnrs.len(),
        })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a Raster, &'a Raster)>) -> Result<Self> {
        let params = SsimParams::default();
        let mut p = Vec::new();
        let mut s = Vec::new();
        for (pred, target) in pairs {
            p.push(psnr(pred, target, 255.0)?);
            s.push(ssim(pred, target, &params)?);
        }
        Self::from_values(&p, &s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> Raster {
        Raster::gray_from_fn(w, h, |x, y| {
            let v = 128.0 + 60.0 * ((x as f64) * 0.37).sin() * ((y as f64) * 0.23).cos()
                + 30.0 * ((x + 2 * y) as f64 * 0.11).sin();
            v.round() as u8
        })
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = textured(16, 16);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_constant_offset_hand_value() {
        let a = Raster::zeros(8, 8, 1);
        let b = Raster::filled(8, 8, 1, 16);
        let expected = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert_eq!(psnr(&a, &b, 255.0).unwrap(), expected);
        assert!((expected - 24.0484).abs() < 1e-4);
    }

    #[test]
    fn psnr_shape_mismatch() {
        assert!(psnr(&Raster::zeros(2, 2, 1), &Raster::zeros(2, 2, 3), 255.0).is_err());
    }

    #[test]
    fn ssim_self_is_exactly_one() {
        let a = textured(40, 33);
        assert_eq!(ssim(&a, &a, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn ssim_inverted_texture_is_negative() {
        let a = textured(64, 64);
        let inv = Raster::from_vec(64, 64, 1, a.data().iter().map(|v| 255 - v).collect()).unwrap();
        let s = ssim(&a, &inv, &SsimParams::default()).unwrap();
        assert!(s < 0.0, "ssim = {s}");
    }

    #[test]
    fn ssim_too_small() {
        let a = Raster::zeros(10, 30, 1);
        assert!(ssim(&a, &a, &SsimParams::default()).is_err());
    }

    #[test]
    fn quality_stats_rejects_infinity_and_uses_population_sigma() {
        assert!(matches!(
            QualityStats::from_values(&[30.0, f64::INFINITY], &[0.9, 0.9]),
            Err(Error::NonFinite(_))
        ));
        let q = QualityStats::from_values(&[30.0, 32.0], &[0.5, 0.7]).unwrap();
        assert_eq!(q.psnr_mean, 31.0);
        assert_eq!(q.psnr_std, 1.0);
        assert!((q.ssim_std - 0.1).abs() < 1e-12);
    }
}
