use std::path::PathBuf;

use ocular_core::dataset::Spectrum;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Core(#[from] ocular_core::Error),

    #[error("torch: {0}")]
    Torch(#[from] tch::TchError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty training set: {0}")]
    EmptyDataset(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },

    #[error("checkpoint translates {expected} input, got {actual}")]
    DirectionMismatch { expected: Spectrum, actual: Spectrum },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("need at least 2 classes, got {0}")]
    SingleClass(usize),

    #[error("{images} images but {labels} labels")]
    LabelCount { images: usize, labels: usize },

    #[error("label {0} is not in the model's label space")]
    UnknownLabel(u32),

    #[error("malformed triplet: {0}")]
    Triplet(String),

    #[error("negative distance {0}")]
    NegativeDistance(f64),

    #[error("percent value {0} outside [0, 100]")]
    Percent(f64),

    #[error("{path}: {reason}")]
    Archive { path: PathBuf, reason: String },
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
