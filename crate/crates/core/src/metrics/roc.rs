//! ROC sweep, equal error rate and GAR at fixed FAR.
//!
//! A comparison is accepted when `score >= threshold`; ties therefore count
//! on the accept side for both labels.

use serde::{Deserialize, Serialize};

use super::scores::ScoreSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub gar: f64,
}

impl RocPoint {
    pub fn frr(&self) -> f64 {
        1.0 - self.gar
    }
}

/// Vertices ordered by decreasing threshold, from `+inf` (0, 0) to `-inf` (1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

fn sorted_desc(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// One vertex per distinct score plus the two infinite thresholds.
pub fn roc_points(scores: &ScoreSet) -> Result<RocCurve> {
    scores.require_both_labels()?;
    let gen = sorted_desc(scores.genuine());
    let imp = sorted_desc(scores.impostor());
    let mut thresholds: Vec<f64> = gen.iter().chain(&imp).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let (ng, ni) = (gen.len() as f64, imp.len() as f64);
    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push(RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        gar: 0.0,
    });
    let (mut gi, mut ii) = (0usize, 0usize);
    for t in thresholds {
        while gi < gen.len() && gen[gi] >= t {
            gi += 1;
        }
        while ii < imp.len() && imp[ii] >= t {
            ii += 1;
        }
        points.push(RocPoint {
            threshold: t,
            far: ii as f64 / ni,
            gar: gi as f64 / ng,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        far: 1.0,
        gar: 1.0,
    });
    Ok(RocCurve {
        points,
        n_genuine: gen.len(),
        n_impostor: imp.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    /// Percent.
    pub eer: f64,
    /// FAR and FRR (fractions) on the interpolated crossing.
    pub far: f64,
    pub frr: f64,
    pub threshold: f64,
}

/// Locates FAR = FRR on a curve, interpolating linearly between the two
/// vertices that bracket the crossing.
pub fn eer_from_curve(curve: &RocCurve) -> EerPoint {
    let pts = &curve.points;
    let diff = |p: &RocPoint| p.far - p.frr();
    let k = pts
        .iter()
        .position(|p| diff(p) >= 0.0)
        .expect("the -inf vertex has FAR 1 and FRR 0");
    let hi = pts[k];
    if diff(&hi) == 0.0 || k == 0 {
        return EerPoint {
            eer: 100.0 * hi.far,
            far: hi.far,
            frr: hi.frr(),
            threshold: hi.threshold,
        };
    }
    let lo = pts[k - 1];
    let (d0, d1) = (diff(&lo), diff(&hi));
    let s = -d0 / (d1 - d0);
    let far = lo.far + s * (hi.far - lo.far);
    let frr = lo.frr() + s * (hi.frr() - lo.frr());
    let threshold = match (lo.threshold.is_finite(), hi.threshold.is_finite()) {
        (true, true) => lo.threshold + s * (hi.threshold - lo.threshold),
        (true, false) => lo.threshold,
        _ => hi.threshold,
    };
    EerPoint {
        eer: 100.0 * 0.5 * (far + frr),
        far,
        frr,
        threshold,
    }
}

pub fn eer_point(scores: &ScoreSet) -> Result<EerPoint> {
    Ok(eer_from_curve(&roc_points(scores)?))
}

/// Equal error rate in percent.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    Ok(eer_point(scores)?.eer)
}

/// Highest GAR (percent) over operating points whose FAR does not exceed the
/// target. No interpolation.
pub fn gar_at_far_from_curve(curve: &RocCurve, far_target: f64) -> Result<f64> {
    if !(far_target > 0.0 && far_target < 1.0) {
        return Err(Error::InvalidInput(format!(
            "FAR target {far_target} outside (0, 1)"
        )));
    }
    let best = curve
        .points
        .iter()
        .filter(|p| p.far <= far_target)
        .map(|p| p.gar)
        .fold(0.0, f64::max);
    Ok(100.0 * best)
}

pub fn gar_at_far(scores: &ScoreSet, far_target: f64) -> Result<f64> {
    gar_at_far_from_curve(&roc_points(scores)?, far_target)
}

/// EER and GAR at 10%, 1% and 0.1% FAR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub eer: f64,
    pub gar_at_10: f64,
    pub gar_at_1: f64,
    pub gar_at_01: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

pub fn summarize(scores: &ScoreSet) -> Result<VerificationSummary> {
    let curve = roc_points(scores)?;
    Ok(VerificationSummary {
        eer: eer_from_curve(&curve).eer,
        gar_at_10: gar_at_far_from_curve(&curve, 0.10)?,
        gar_at_1: gar_at_far_from_curve(&curve, 0.01)?,
        gar_at_01: gar_at_far_from_curve(&curve, 0.001)?,
        n_genuine: curve.n_genuine,
        n_impostor: curve.n_impostor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(g: &[f64], i: &[f64]) -> ScoreSet {
        ScoreSet::from_scores("t", g, i).unwrap()
    }

    #[test]
    fn separable_scores() {
        let s = set(&[2.0, 3.0], &[0.0, 1.0]);
        let curve = roc_points(&s).unwrap();
        assert!(curve.points.iter().any(|p| p.far == 0.0 && p.gar == 1.0));
        assert_eq!(eer(&s).unwrap(), 0.0);
        for t in [0.1, 0.01, 0.001] {
            assert_eq!(gar_at_far(&s, t).unwrap(), 100.0);
        }
    }

    #[test]
    fn endpoints_present() {
        let c = roc_points(&set(&[0.3], &[0.7])).unwrap();
        let first = c.points.first().unwrap();
        let last = c.points.last().unwrap();
        assert_eq!((first.far, first.gar), (0.0, 0.0));
        assert_eq!((last.far, last.gar), (1.0, 1.0));
    }

    #[test]
    fn crossing_exactly_at_vertex() {
        // t = 2: FAR = 1/4 (impostor 2.0), GAR = 3/4 (genuine 2, 3, 4) -> FRR = 1/4.
        let s = set(&[1.0, 2.0, 3.0, 4.0], &[-1.0, 0.0, 0.5, 2.0]);
        let p = eer_point(&s).unwrap();
        assert_eq!(p.eer, 25.0);
        assert_eq!(p.threshold, 2.0);
    }

    #[test]
    fn ties_counted_as_accepts() {
        let s = set(&[1.0], &[1.0]);
        let c = roc_points(&s).unwrap();
        assert_eq!(c.points.len(), 3);
        assert_eq!((c.points[1].far, c.points[1].gar), (1.0, 1.0));
        assert_eq!(eer(&s).unwrap(), 50.0);
    }

    #[test]
    fn single_label_rejected() {
        let s = set(&[1.0, 2.0], &[]);
        assert!(roc_points(&s).is_err());
        assert!(eer(&s).is_err());
        assert!(gar_at_far(&s, 0.01).is_err());
    }

    #[test]
    fn far_target_bounds() {
        let s = set(&[1.0], &[0.0]);
        for t in [0.0, 1.0, -0.1, 2.0] {
            assert!(gar_at_far(&s, t).is_err());
        }
    }
}
