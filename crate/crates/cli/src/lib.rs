//! Experiment runner behind the `lrlindblad` binary.

pub mod config;
pub mod output;
pub mod run;

pub use config::{ConfigErrors, ExperimentConfig, Mode, Overrides};
pub use run::{run, RunError, RunOutput};
