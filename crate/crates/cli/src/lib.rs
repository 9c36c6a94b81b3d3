//! Experiment runner: config, cached stages, reports.

pub mod config;
pub mod pipeline;
pub mod protocol;
pub mod report;
pub mod stage;
pub mod store;

pub use config::ExperimentConfig;
pub use pipeline::{HeadRef, Pipeline, RunOutcome};
pub use protocol::{ProtocolSpec, Side};
