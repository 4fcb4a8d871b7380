//! Library side of the `nuisance` command: configuration, the experiment
//! runner and report generation.

pub mod artifacts;
pub mod config;
pub mod experiment;
pub mod report;

pub use config::{DatasetSource, ExperimentConfig, InputFormat};
pub use experiment::{run_experiment, Manifest, RunOutcome};
