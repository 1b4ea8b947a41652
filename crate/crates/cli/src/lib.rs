//! Config-driven runner for `sde-moments`: Algorithm-1 moments, marginal
//! densities, a Monte Carlo baseline and comparisons between them.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::RunConfig;
pub use error::CliError;
pub use run::{run_baseline, run_compare, run_density, run_moments, RunOptions};
