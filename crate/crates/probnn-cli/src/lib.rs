//! Command-line harness for the closed-form Bayesian network library:
//! dataset generation, sequential training, prediction, and export of
//! predictive-moment grids.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
