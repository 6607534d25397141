//! Experiment harness for the `alpha-smc` filter: configuration, the
//! commands behind the `asmc` binary and their summary reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod estimands;
pub mod stats;

pub use commands::*;
pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
