//! Data handling, image geometry, descriptor baselines and verification
//! metrics for cross-spectral (NIR/VIS) ocular matching.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod preprocess;
pub mod raster;

pub use error::{Error, Result};
pub use raster::Raster;
