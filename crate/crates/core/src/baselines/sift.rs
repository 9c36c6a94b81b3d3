//! Scale-invariant keypoints, 128-d gradient descriptors and ratio-test
//! matching. Follows the classic DoG detector: no initial upsampling, three
//! scales per octave, sub-pixel refinement, edge rejection, dominant
//! orientations from a 36-bin histogram.

use serde::{Deserialize, Serialize};

use super::lbp::require_gray;
use crate::error::Result;
use crate::raster::Raster;

const BORDER: usize = 5;
const MAX_INTERP_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_SIG_FCTR: f32 = 1.5;
const ORI_RADIUS: f32 = 3.0 * ORI_SIG_FCTR;
const ORI_PEAK_RATIO: f32 = 0.8;
const DESCR_WIDTH: usize = 4;
const DESCR_BINS: usize = 8;
const DESCR_SCL_FCTR: f32 = 3.0;
const DESCR_MAG_THR: f32 = 0.2;
const INIT_SIGMA: f32 = 0.5;

pub const DESCRIPTOR_LEN: usize = DESCR_WIDTH * DESCR_WIDTH * DESCR_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftConfig {
    pub octave_layers: usize,
    pub sigma: f32,
    pub contrast_threshold: f32,
    pub edge_threshold: f32,
    /// Strongest keypoints kept per image (0 keeps all).
    pub max_keypoints: usize,
    pub ratio: f32,
}

impl Default for SiftConfig {
    fn default() -> Self {
        SiftConfig {
            octave_layers: 3,
            sigma: 1.6,
            contrast_threshold: 0.04,
            edge_threshold: 10.0,
            max_keypoints: 400,
            ratio: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyPoint {
    /// Position in input-image pixels.
    pub x: f32,
    pub y: f32,
    /// Diameter of the meaningful neighbourhood.
    pub size: f32,
    /// Degrees in [0, 360).
    pub angle: f32,
    pub response: f32,
    pub octave: usize,
    layer: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SiftFeatures {
    pub keypoints: Vec<KeyPoint>,
    pub descriptors: Vec<[f32; DESCRIPTOR_LEN]>,
}

impl SiftFeatures {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    d: Vec<f32>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.d[y * self.w + x]
    }
}

fn blur(p: &Plane, sigma: f32) -> Plane {
    let r = ((sigma * 4.0).ceil() as usize).max(1);
    let mut k: Vec<f32> = (0..=2 * r)
        .map(|i| {
            let t = i as f32 - r as f32;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h) = (p.w, p.h);
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &p.d[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * row[clampi(x as isize + i as isize - r as isize, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for (i, &kv) in k.iter().enumerate() {
            let src = clampi(y as isize + i as isize - r as isize, h);
            let src_row = &tmp[src * w..(src + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                dst[x] += kv * src_row[x];
            }
        }
    }
    Plane { w, h, d: out }
}

fn downsample(p: &Plane) -> Plane {
    let (w, h) = (p.w / 2, p.h / 2);
    let mut d = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            d.push(p.at(2 * x, 2 * y));
        }
    }
    Plane { w, h, d }
}

fn sub(a: &Plane, b: &Plane) -> Plane {
    Plane {
        w: a.w,
        h: a.h,
        d: a.d.iter().zip(&b.d).map(|(x, y)| x - y).collect(),
    }
}

struct Pyramid {
    gauss: Vec<Vec<Plane>>,
    dog: Vec<Vec<Plane>>,
}

fn build_pyramid(img: &Raster, cfg: &SiftConfig) -> Pyramid {
    let s = cfg.octave_layers;
    let base = Plane {
        w: img.width(),
        h: img.height(),
        d: img.data().iter().map(|&v| f32::from(v) / 255.0).collect(),
    };
    let base = blur(&base, (cfg.sigma * cfg.sigma - INIT_SIGMA * INIT_SIGMA).max(0.01).sqrt());
    let min_side = img.width().min(img.height()) as f32;
    let n_oct = (min_side.log2().round() as i64 - 3).max(1) as usize;
    let k = 2f32.powf(1.0 / s as f32);
    let mut sig = vec![cfg.sigma; s + 3];
    for (i, v) in sig.iter_mut().enumerate().skip(1) {
        let prev = cfg.sigma * k.powi(i as i32 - 1);
        let total = prev * k;
        *v = (total * total - prev * prev).sqrt();
    }
    let mut gauss: Vec<Vec<Plane>> = Vec::with_capacity(n_oct);
    for o in 0..n_oct {
        let mut layers: Vec<Plane> = Vec::with_capacity(s + 3);
        for i in 0..s + 3 {
            let p = if i == 0 {
                if o == 0 {
                    base.clone()
                } else {
                    downsample(&gauss[o - 1][s])
                }
            } else {
                blur(&layers[i - 1], sig[i])
            };
            layers.push(p);
        }
        gauss.push(layers);
    }
    let dog = gauss
        .iter()
        .map(|layers| layers.windows(2).map(|w| sub(&w[1], &w[0])).collect())
        .collect();
    Pyramid { gauss, dog }
}

fn is_extremum(dog: &[Plane], i: usize, x: usize, y: usize, v: f32) -> bool {
    let mut is_max = v > 0.0;
    let mut is_min = v < 0.0;
    for p in &dog[i - 1..=i + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = p.at(xx, yy);
                is_max &= v >= n;
                is_min &= v <= n;
            }
        }
        if !is_max && !is_min {
            return false;
        }
    }
    is_max || is_min
}

fn solve3(h: [[f32; 3]; 3], b: [f32; 3]) -> Option<[f32; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let mut out = [0.0f32; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = h;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        let d = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        *o = d / det;
    }
    Some(out)
}

/// Sub-pixel/sub-scale refinement; returns the keypoint and the refined layer.
fn refine(pyr: &Pyramid, o: usize, mut layer: usize, mut x: usize, mut y: usize, cfg: &SiftConfig) -> Option<KeyPoint> {
    let s = cfg.octave_layers;
    let dog = &pyr.dog[o];
    let (w, h) = (dog[0].w, dog[0].h);
    let mut off = [0.0f32; 3];
    let mut grad = [0.0f32; 3];
    let mut hess = [[0.0f32; 3]; 3];
    let mut converged = false;
    for _ in 0..MAX_INTERP_STEPS {
        let (p, c, n) = (&dog[layer - 1], &dog[layer], &dog[layer + 1]);
        let v = c.at(x, y);
        grad = [
            (c.at(x + 1, y) - c.at(x - 1, y)) * 0.5,
            (c.at(x, y + 1) - c.at(x, y - 1)) * 0.5,
            (n.at(x, y) - p.at(x, y)) * 0.5,
        ];
        let dxx = c.at(x + 1, y) + c.at(x - 1, y) - 2.0 * v;
        let dyy = c.at(x, y + 1) + c.at(x, y - 1) - 2.0 * v;
        let dss = n.at(x, y) + p.at(x, y) - 2.0 * v;
        let dxy = (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1) + c.at(x - 1, y - 1)) * 0.25;
        let dxs = (n.at(x + 1, y) - n.at(x - 1, y) - p.at(x + 1, y) + p.at(x - 1, y)) * 0.25;
        let dys = (n.at(x, y + 1) - n.at(x, y - 1) - p.at(x, y + 1) + p.at(x, y - 1)) * 0.25;
        hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        off = solve3(hess, [-grad[0], -grad[1], -grad[2]])?;
        if off.iter().all(|v| v.abs() < 0.5) {
            converged = true;
            break;
        }
        if off.iter().any(|v| v.abs() > 1e4) {
            return None;
        }
        let nx = x as i64 + off[0].round() as i64;
        let ny = y as i64 + off[1].round() as i64;
        let nl = layer as i64 + off[2].round() as i64;
        if nl < 1 || nl > s as i64 || nx < BORDER as i64 || nx >= (w - BORDER) as i64 || ny < BORDER as i64 || ny >= (h - BORDER) as i64 {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        layer = nl as usize;
    }
    if !converged {
        return None;
    }
    let contrast = dog[layer].at(x, y) + 0.5 * (grad[0] * off[0] + grad[1] * off[1] + grad[2] * off[2]);
    if contrast.abs() * (s as f32) < cfg.contrast_threshold {
        return None;
    }
    let (dxx, dyy, dxy) = (hess[0][0], hess[1][1], hess[0][1]);
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = cfg.edge_threshold;
    if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }
    let scale = (1usize << o) as f32;
    Some(KeyPoint {
        x: (x as f32 + off[0]) * scale,
        y: (y as f32 + off[1]) * scale,
        size: cfg.sigma * 2f32.powf((layer as f32 + off[2]) / s as f32) * scale * 2.0,
        angle: 0.0,
        response: contrast.abs(),
        octave: o,
        layer,
    })
}

/// Dominant orientations (degrees) around an integer position of a Gaussian layer.
fn orientations(img: &Plane, x: usize, y: usize, scl: f32) -> Vec<f32> {
    let radius = (ORI_RADIUS * scl).round() as i64;
    let sigma = ORI_SIG_FCTR * scl;
    let mut hist = [0.0f32; ORI_BINS];
    for i in -radius..=radius {
        let yy = y as i64 + i;
        if yy <= 0 || yy >= img.h as i64 - 1 {
            continue;
        }
        for j in -radius..=radius {
            let xx = x as i64 + j;
            if xx <= 0 || xx >= img.w as i64 - 1 {
                continue;
            }
            let (xu, yu) = (xx as usize, yy as usize);
            let dx = img.at(xu + 1, yu) - img.at(xu - 1, yu);
            let dy = img.at(xu, yu - 1) - img.at(xu, yu + 1);
            let wgt = (-((i * i + j * j) as f32) / (2.0 * sigma * sigma)).exp();
            let mut ang = dy.atan2(dx).to_degrees();
            if ang < 0.0 {
                ang += 360.0;
            }
            let bin = ((ang * ORI_BINS as f32 / 360.0).round() as usize) % ORI_BINS;
            hist[bin] += wgt * (dx * dx + dy * dy).sqrt();
        }
    }
    let n = ORI_BINS;
    let smooth: Vec<f32> = (0..n)
        .map(|i| {
            let at = |d: isize| hist[((i as isize + d).rem_euclid(n as isize)) as usize];
            (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0
        })
        .collect();
    let max = smooth.iter().copied().fold(0.0, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let l = smooth[(i + n - 1) % n];
        let r = smooth[(i + 1) % n];
        let c = smooth[i];
        if c > l && c > r && c >= ORI_PEAK_RATIO * max {
            let mut bin = i as f32 + 0.5 * (l - r) / (l - 2.0 * c + r);
            if bin < 0.0 {
                bin += n as f32;
            } else if bin >= n as f32 {
                bin -= n as f32;
            }
            let mut angle = 360.0 - bin * 360.0 / n as f32;
            if (angle - 360.0).abs() < f32::EPSILON * 360.0 {
                angle = 0.0;
            }
            out.push(angle);
        }
    }
    out
}

fn descriptor(img: &Plane, x: f32, y: f32, angle: f32, scl: f32) -> [f32; DESCRIPTOR_LEN] {
    let d = DESCR_WIDTH;
    let n = DESCR_BINS;
    let (px, py) = (x.round() as i64, y.round() as i64);
    let mut ori = 360.0 - angle;
    if (ori - 360.0).abs() < f32::EPSILON * 360.0 {
        ori = 0.0;
    }
    let (sin_t, cos_t) = ori.to_radians().sin_cos();
    let bins_per_deg = n as f32 / 360.0;
    let exp_scale = -1.0 / (d as f32 * d as f32 * 0.5);
    let hist_width = DESCR_SCL_FCTR * scl;
    let diag = ((img.w * img.w + img.h * img.h) as f32).sqrt();
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5).round().min(diag) as i64;
    let (cos_t, sin_t) = (cos_t / hist_width, sin_t / hist_width);

    let stride_c = n + 2;
    let stride_r = (d + 2) * stride_c;
    let mut hist = vec![0.0f32; (d + 2) * stride_r];
    for i in -radius..=radius {
        for j in -radius..=radius {
            let c_rot = j as f32 * cos_t - i as f32 * sin_t;
            let r_rot = j as f32 * sin_t + i as f32 * cos_t;
            let rbin = r_rot + d as f32 / 2.0 - 0.5;
            let cbin = c_rot + d as f32 / 2.0 - 0.5;
            let (r, c) = (py + i, px + j);
            if !(rbin > -1.0 && rbin < d as f32 && cbin > -1.0 && cbin < d as f32) {
                continue;
            }
            if r <= 0 || r >= img.h as i64 - 1 || c <= 0 || c >= img.w as i64 - 1 {
                continue;
            }
            let (cu, ru) = (c as usize, r as usize);
            let dx = img.at(cu + 1, ru) - img.at(cu - 1, ru);
            let dy = img.at(cu, ru - 1) - img.at(cu, ru + 1);
            let mut g_ori = dy.atan2(dx).to_degrees();
            if g_ori < 0.0 {
                g_ori += 360.0;
            }
            let mag = (dx * dx + dy * dy).sqrt() * ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let mut obin = (g_ori - ori) * bins_per_deg;

            let r0 = rbin.floor();
            let c0 = cbin.floor();
            let o0 = obin.floor();
            let (rf, cf) = (rbin - r0, cbin - c0);
            obin -= o0;
            let mut o0 = o0 as i64;
            o0 = o0.rem_euclid(n as i64);
            let (r0, c0) = ((r0 as i64 + 1) as usize, (c0 as i64 + 1) as usize);
            let o0 = o0 as usize;

            let v_r1 = mag * rf;
            let v_r0 = mag - v_r1;
            let v_rc11 = v_r1 * cf;
            let v_rc10 = v_r1 - v_rc11;
            let v_rc01 = v_r0 * cf;
            let v_rc00 = v_r0 - v_rc01;
            let corners = [
                (r0, c0, v_rc00),
                (r0, c0 + 1, v_rc01),
                (r0 + 1, c0, v_rc10),
                (r0 + 1, c0 + 1, v_rc11),
            ];
            for (rr, cc, v) in corners {
                let base = rr * stride_r + cc * stride_c;
                let v1 = v * obin;
                hist[base + o0] += v - v1;
                hist[base + o0 + 1] += v1;
            }
        }
    }
    let mut out = [0.0f32; DESCRIPTOR_LEN];
    for i in 0..d {
        for j in 0..d {
            let base = (i + 1) * stride_r + (j + 1) * stride_c;
            let cell = &mut hist[base..base + n + 2];
            cell[0] += cell[n];
            cell[1] += cell[n + 1];
            for k in 0..n {
                out[(i * d + j) * n + k] = cell[k];
            }
        }
    }
    let nrm = out.iter().map(|v| v * v).sum::<f32>().sqrt();
    let thr = nrm * DESCR_MAG_THR;
    out.iter_mut().for_each(|v| *v = v.min(thr));
    let nrm = out.iter().map(|v| v * v).sum::<f32>().sqrt().max(f32::EPSILON);
    out.iter_mut().for_each(|v| *v /= nrm);
    out
}

/// Detects keypoints and computes their descriptors.
pub fn sift_features(img: &Raster, cfg: &SiftConfig) -> Result<SiftFeatures> {
    require_gray(img)?;
    if img.width().min(img.height()) < 2 * BORDER + 3 {
        return Ok(SiftFeatures::default());
    }
    let pyr = build_pyramid(img, cfg);
    let s = cfg.octave_layers;
    let prelim = 0.5 * cfg.contrast_threshold / s as f32;
    let mut kps: Vec<KeyPoint> = Vec::new();
    for (o, dog) in pyr.dog.iter().enumerate() {
        let (w, h) = (dog[0].w, dog[0].h);
        if w <= 2 * BORDER || h <= 2 * BORDER {
            continue;
        }
        for layer in 1..=s {
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    let v = dog[layer].at(x, y);
                    if v.abs() <= prelim || !is_extremum(dog, layer, x, y, v) {
                        continue;
                    }
                    let Some(kp) = refine(&pyr, o, layer, x, y, cfg) else {
                        continue;
                    };
                    let scale = (1usize << o) as f32;
                    let scl_oct = kp.size * 0.5 / scale;
                    let gimg = &pyr.gauss[o][kp.layer];
                    let ox = (kp.x / scale).round() as usize;
                    let oy = (kp.y / scale).round() as usize;
                    for angle in orientations(gimg, ox, oy, scl_oct) {
                        kps.push(KeyPoint { angle, ..kp });
                    }
                }
            }
        }
    }
    kps.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.angle.total_cmp(&b.angle))
    });
    if cfg.max_keypoints > 0 {
        kps.truncate(cfg.max_keypoints);
    }
    let descriptors = kps
        .iter()
        .map(|kp| {
            let scale = (1usize << kp.octave) as f32;
            descriptor(&pyr.gauss[kp.octave][kp.layer], kp.x / scale, kp.y / scale, kp.angle, kp.size * 0.5 / scale)
        })
        .collect();
    Ok(SiftFeatures {
        keypoints: kps,
        descriptors,
    })
}

fn dist2(a: &[f32; DESCRIPTOR_LEN], b: &[f32; DESCRIPTOR_LEN]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Number of descriptors in `a` whose nearest neighbour in `b` passes the
/// ratio test `d1 < ratio * d2`.
pub fn ratio_matches(a: &SiftFeatures, b: &SiftFeatures, ratio: f32) -> usize {
    if b.len() < 2 {
        return 0;
    }
    let r2 = ratio * ratio;
    a.descriptors
        .iter()
        .filter(|da| {
            let (mut best, mut second) = (f32::INFINITY, f32::INFINITY);
            for db in &b.descriptors {
                let d = dist2(da, db);
                if d < best {
                    second = best;
                    best = d;
                } else if d < second {
                    second = d;
                }
            }
            best < r2 * second
        })
        .count()
}

/// Matches normalized by the mean keypoint count of the two images.
pub fn sift_score_features(a: &SiftFeatures, b: &SiftFeatures, ratio: f32) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let m = ratio_matches(a, b, ratio) as f64;
    m / (0.5 * (a.len() + b.len()) as f64)
}

pub fn sift_match_score(a: &Raster, b: &Raster, cfg: &SiftConfig) -> Result<f64> {
    let fa = sift_features(a, cfg)?;
    let fb = sift_features(b, cfg)?;
    Ok(sift_score_features(&fa, &fb, cfg.ratio))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(w: usize, h: usize, seed: u64) -> Raster {
        let mut centers = Vec::new();
        let mut s = seed;
        for _ in 0..25 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let cx = (s >> 33) as usize % w;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let cy = (s >> 33) as usize % h;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let r = 3.0 + ((s >> 33) % 8) as f64;
            centers.push((cx as f64, cy as f64, r));
        }
        Raster::gray_from_fn(w, h, |x, y| {
            let mut v = 60.0;
            for &(cx, cy, r) in &centers {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v += 150.0 * (-d2 / (2.0 * r * r)).exp();
            }
            v.min(255.0) as u8
        })
    }

    #[test]
    fn blank_has_no_keypoints() {
        let cfg = SiftConfig::default();
        let blank = Raster::filled(128, 128, 1, 100);
        assert!(sift_features(&blank, &cfg).unwrap().is_empty());
        assert_eq!(sift_match_score(&blank, &blank, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn self_match_near_one() {
        let cfg = SiftConfig::default();
        let img = blobs(128, 128, 3);
        let f = sift_features(&img, &cfg).unwrap();
        assert!(f.len() >= 5, "only {} keypoints", f.len());
        let s = sift_score_features(&f, &f, cfg.ratio);
        assert!(s >= 0.9 && s <= 1.0, "{s}");
    }

    #[test]
    fn descriptors_unit_norm_and_clamped() {
        let f = sift_features(&blobs(128, 128, 9), &SiftConfig::default()).unwrap();
        for d in &f.descriptors {
            let n: f32 = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-4);
            assert!(d.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn score_bounded() {
        let cfg = SiftConfig::default();
        let (a, b) = (blobs(128, 128, 1), blobs(96, 128, 2));
        let s = sift_match_score(&a, &b, &cfg).unwrap();
        assert!((0.0..=2.0).contains(&s));
    }

    #[test]
    fn deterministic() {
        let cfg = SiftConfig::default();
        let img = blobs(128, 128, 4);
        let a = sift_features(&img, &cfg).unwrap();
        let b = sift_features(&img, &cfg).unwrap();
        assert_eq!(a.descriptors, b.descriptors);
    }
}
