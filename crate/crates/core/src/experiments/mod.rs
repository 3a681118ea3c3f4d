//! The five experiment recipes, sweep execution and experiment-level analysis.

pub mod analysis;
pub mod config;
mod id;
pub mod runner;

pub use analysis::{analyze, ExperimentSummary, ScalingPoint};
pub use config::{linear_spaced, log_spaced, ExperimentConfig, Scale, Sweep};
pub use id::ExperimentId;
pub use runner::{execute_run, regenerate_data, run_experiment, RunOutcome, SweepReport};
