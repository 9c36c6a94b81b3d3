use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::SampleKey;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected a {expected} image, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    Length { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing counterpart for {key}: no {missing} image")]
    Pairing { key: SampleKey, missing: String },

    #[error("cannot parse sample file name {name:?}: {reason}")]
    FileName { name: String, reason: String },

    #[error("duplicate sample {0}")]
    DuplicateSample(SampleKey),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("score set {name:?} needs both genuine and impostor entries")]
    SingleLabel { name: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient test images: {0}")]
    InsufficientImages(String),

    #[error("protocol mismatch: {left} vs {right}")]
    ProtocolMismatch { left: String, right: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: malformed record: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
