//! Linear logistic regression over per-system scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Label, ScoreEntry, ScoreSet};

const MAX_ITERS: usize = 100;
const TOL: f64 = 1e-10;

/// `fused = logistic(w . s + b)`, with `s` the raw per-system scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl FusionModel {
    pub fn logit(&self, scores: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(scores).map(|(w, s)| w * s).sum::<f64>()
    }

    pub fn fuse(&self, scores: &[f64]) -> Result<f64> {
        if scores.len() != self.weights.len() {
            return Err(Error::Length {
                expected: self.weights.len(),
                actual: scores.len(),
            });
        }
        Ok(logistic(self.logit(scores)))
    }

    /// Fuses aligned score sets into one set named `name`.
    pub fn fuse_sets(&self, sets: &[ScoreSet], name: &str) -> Result<ScoreSet> {
        let (rows, labels) = aligned(sets)?;
        let entries = rows
            .iter()
            .zip(&labels)
            .zip(&sets[0].entries)
            .map(|((row, &label), e)| {
                Ok(ScoreEntry {
                    pair_id: e.pair_id.clone(),
                    label,
                    score: self.fuse(row)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ScoreSet::new(name, entries)
    }
}

/// Row-major score vectors and labels from sets that list the same pairs in the same order.
pub fn aligned(sets: &[ScoreSet]) -> Result<(Vec<Vec<f64>>, Vec<Label>)> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidInput("no score sets to fuse".into()))?;
    for s in &sets[1..] {
        if s.len() != first.len()
            || s.entries
                .iter()
                .zip(&first.entries)
                .any(|(a, b)| a.pair_id != b.pair_id || a.label != b.label)
        {
            return Err(Error::ProtocolMismatch {
                left: first.protocol_name.clone(),
                right: s.protocol_name.clone(),
            });
        }
    }
    let rows = (0..first.len())
        .map(|i| sets.iter().map(|s| s.entries[i].score).collect())
        .collect();
    Ok((rows, first.entries.iter().map(|e| e.label).collect()))
}

/// Gaussian elimination with partial pivoting; `a` is n x n row-major.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Maximum-likelihood fit by Newton iterations on standardized inputs. A
/// small ridge on the weights (not the bias) keeps separable data finite.
pub fn fit_llr(rows: &[Vec<f64>], labels: &[Label], ridge: f64) -> Result<FusionModel> {
    let n = rows.len();
    if n != labels.len() {
        return Err(Error::Length {
            expected: n,
            actual: labels.len(),
        });
    }
    let ng = labels.iter().filter(|l| l.is_genuine()).count();
    if ng == 0 || ng == n {
        return Err(Error::SingleLabel {
            name: "fusion training scores".into(),
        });
    }
    let k = rows[0].len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidInput("ragged or empty fusion inputs".into()));
    }
    let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let scale: Vec<f64> = (0..k)
        .map(|j| {
            let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut v: Vec<f64> = (0..k).map(|j| (r[j] - mean[j]) / scale[j]).collect();
            v.push(1.0);
            v
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|l| if l.is_genuine() { 1.0 } else { 0.0 }).collect();
    let d = k + 1;
    let mut beta = vec![0.0; d];
    for _ in 0..MAX_ITERS {
        let mut g = vec![0.0; d];
        let mut h = vec![vec![0.0; d]; d];
        for (xi, yi) in x.iter().zip(&y) {
            let z: f64 = xi.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = logistic(z);
            let w = p * (1.0 - p);
            for a in 0..d {
                g[a] += xi[a] * (yi - p);
                for b in a..d {
                    h[a][b] += w * xi[a] * xi[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                h[a][b] = h[b][a];
            }
        }
        for j in 0..k {
            g[j] -= ridge * beta[j];
            h[j][j] += ridge;
        }
        let step = solve(h, g).ok_or_else(|| Error::NonFinite("singular fusion Hessian".into()))?;
        let mut max_step: f64 = 0.0;
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
            max_step = max_step.max(s.abs());
        }
        if !max_step.is_finite() {
            return Err(Error::NonFinite("fusion weights diverged".into()));
        }
        if max_step < TOL {
            break;
        }
    }
    let weights: Vec<f64> = (0..k).map(|j| beta[j] / scale[j]).collect();
    let bias = beta[k] - (0..k).map(|j| beta[j] * mean[j] / scale[j]).sum::<f64>();
    Ok(FusionModel { weights, bias })
}

pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Fits on aligned score sets (at least two systems).
pub fn fit_llr_fusion(sets: &[ScoreSet]) -> Result<FusionModel> {
    if sets.len() < 2 {
        return Err(Error::InvalidInput(format!("fusion needs at least 2 systems, got {}", sets.len())));
    }
    let (rows, labels) = aligned(sets)?;
    fit_llr(&rows, &labels, DEFAULT_RIDGE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
        assert!((logistic(2.0) + logistic(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn recovers_known_weights() {
        // Deterministic design with labels drawn from a known logistic model.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut s = 12345u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20000 {
            let a = next() * 4.0 - 2.0;
            let b = next() * 4.0 - 2.0;
            let p = logistic(1.5 * a - 0.5 * b + 0.25);
            labels.push(if next() < p { Label::Genuine } else { Label::Impostor });
            rows.push(vec![a, b]);
        }
        let m = fit_llr(&rows, &labels, 0.0).unwrap();
        assert!((m.weights[0] - 1.5).abs() < 0.1, "{m:?}");
        assert!((m.weights[1] + 0.5).abs() < 0.1, "{m:?}");
        assert!((m.bias - 0.25).abs() < 0.1, "{m:?}");
    }

    #[test]
    fn degenerate_inputs() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 3.0]];
        assert!(matches!(
            fit_llr(&rows, &[Label::Genuine, Label::Genuine], DEFAULT_RIDGE),
            Err(Error::SingleLabel { .. })
        ));
        let a = ScoreSet::from_scores("a", &[1.0], &[0.0]).unwrap();
        assert!(fit_llr_fusion(&[a.clone()]).is_err());
        let b = ScoreSet::from_scores("b", &[1.0, 2.0], &[0.0]).unwrap();
        assert!(matches!(fit_llr_fusion(&[a, b]), Err(Error::ProtocolMismatch { .. })));
    }
}
