//! Experiment harness for group-sparse BD precoding.
//!
//! Subcommands map onto [`experiments`]: `converge` (residual and active-set
//! traces per step size), `tradeoff` (rate vs active RAPs, fixed-deployment
//! baseline, optional exhaustive frontier), `powers` (per-RAP power traces)
//! and `bench` (per-iteration cost vs number of RAPs).

pub mod config;
pub mod csv;
mod error;
pub mod experiments;

pub use config::{load_config, ExperimentConfig};
pub use error::{CliError, Result};
