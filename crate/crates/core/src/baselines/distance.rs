use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHI2_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[serde(alias = "eucl")]
    Euclidean,
    Chi2,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "eucl",
            Metric::Chi2 => "chi2",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eucl" | "euclidean" => Ok(Metric::Euclidean),
            "chi2" | "x2" => Ok(Metric::Chi2),
            _ => Err(Error::InvalidInput(format!("unknown metric {s:?}"))),
        }
    }
}

pub fn pair_distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Length {
            expected: a.len(),
            actual: b.len(),
        });
    }
    match metric {
        Metric::Euclidean => Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()),
        Metric::Chi2 => {
            if a.iter().chain(b).any(|&v| v < 0.0) {
                return Err(Error::InvalidInput("chi2 needs nonnegative entries".into()));
            }
            Ok(a.iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = x - y;
                    d * d / (x + y + CHI2_EPS)
                })
                .sum())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let (a, b) = ([1.0, 0.0], [0.0, 1.0]);
        assert_eq!(pair_distance(&a, &b, Metric::Euclidean).unwrap(), 2f64.sqrt());
        assert!((pair_distance(&a, &b, Metric::Chi2).unwrap() - 2.0).abs() < 1e-9);
        for m in [Metric::Euclidean, Metric::Chi2] {
            assert_eq!(pair_distance(&a, &a, m).unwrap(), 0.0);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            pair_distance(&[1.0], &[1.0, 2.0], Metric::Euclidean),
            Err(Error::Length { .. })
        ));
        assert!(pair_distance(&[-1.0], &[1.0], Metric::Chi2).is_err());
        assert!(pair_distance(&[-1.0], &[1.0], Metric::Euclidean).is_ok());
    }

    #[test]
    fn parse() {
        assert_eq!("eucl".parse::<Metric>().unwrap(), Metric::Euclidean);
        assert_eq!("CHI2".parse::<Metric>().unwrap(), Metric::Chi2);
        assert!("l1".parse::<Metric>().is_err());
    }
}
