//! Experiment runner around the simulator core: JSON configs, the four
//! subcommands (`run`, `calibrate`, `sweep`, `report`), and the file formats
//! they produce.

pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod runner;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
