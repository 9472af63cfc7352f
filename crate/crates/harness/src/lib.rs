//! Experiment harness: training runs, sweeps, comparisons, CSV logs and SVG plots.

pub mod cli;
pub mod config;
pub mod error;
pub mod plot;
pub mod runlog;
pub mod runner;
pub mod sweep;

pub use config::{ConfigMap, RunConfig, SweepGrid};
pub use error::HarnessError;
pub use runner::{run_experiment, run_on, EpochRecord, RunLog, RunSummary};
