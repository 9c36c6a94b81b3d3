//! Descriptor matchers for the baseline tables and score-level fusion.

mod distance;
mod fusion;
mod hog;
mod lbp;
mod sift;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use distance::{pair_distance, Metric, CHI2_EPS};
pub use fusion::{aligned, fit_llr, fit_llr_fusion, logistic, FusionModel, DEFAULT_RIDGE};
pub use hog::{hog_descriptor, HogConfig};
pub use lbp::{lbp_code, lbp_descriptor, LbpConfig, NEIGHBORS};
pub use sift::{
    ratio_matches, sift_features, sift_match_score, sift_score_features, KeyPoint, SiftConfig, SiftFeatures,
    DESCRIPTOR_LEN,
};

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub lbp: LbpConfig,
    pub hog: HogConfig,
    pub sift: SiftConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    /// Raw gray pixels scaled to [0, 1].
    Pixel,
    Lbp,
    Hog,
    Sift,
}

impl SystemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::Pixel => "pixel",
            SystemKind::Lbp => "lbp",
            SystemKind::Hog => "hog",
            SystemKind::Sift => "sift",
        }
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pixel" => Ok(SystemKind::Pixel),
            "lbp" => Ok(SystemKind::Lbp),
            "hog" => Ok(SystemKind::Hog),
            "sift" => Ok(SystemKind::Sift),
            _ => Err(Error::InvalidInput(format!("unknown baseline system {s:?}"))),
        }
    }
}

/// A matcher: descriptor kind plus the distance used for vector descriptors
/// (SIFT ignores it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BaselineSystem {
    pub kind: SystemKind,
    pub metric: Metric,
}

impl fmt::Display for BaselineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SystemKind::Sift => f.write_str("sift"),
            k => write!(f, "{}_{}", k.as_str(), self.metric),
        }
    }
}

/// Per-image features, computed once and compared many times.
#[derive(Debug, Clone)]
pub enum Features {
    Vector(Vec<f64>),
    Sift(SiftFeatures),
}

impl BaselineSystem {
    pub fn new(kind: SystemKind, metric: Metric) -> Self {
        BaselineSystem { kind, metric }
    }

    pub fn extract(&self, img: &Raster, cfg: &DescriptorConfig) -> Result<Features> {
        if !img.is_gray() {
            return Err(Error::InvalidInput(format!(
                "{} needs a gray image, got {} channels",
                self,
                img.channels()
            )));
        }
        Ok(match self.kind {
            SystemKind::Pixel => Features::Vector(img.data().iter().map(|&v| f64::from(v) / 255.0).collect()),
            SystemKind::Lbp => Features::Vector(lbp_descriptor(img, &cfg.lbp)?),
            SystemKind::Hog => Features::Vector(hog_descriptor(img, &cfg.hog)?),
            SystemKind::Sift => Features::Sift(sift_features(img, &cfg.sift)?),
        })
    }

    /// Higher means more likely genuine: negated distance, or the SIFT match score.
    pub fn compare(&self, a: &Features, b: &Features, cfg: &DescriptorConfig) -> Result<f64> {
        match (a, b) {
            (Features::Vector(x), Features::Vector(y)) => Ok(-pair_distance(x, y, self.metric)?),
            (Features::Sift(x), Features::Sift(y)) => Ok(sift_score_features(x, y, cfg.sift.ratio)),
            _ => Err(Error::InvalidInput("comparing features of different kinds".into())),
        }
    }
}
