//! Experiment harness for the Euler weak-error laboratory.
//!
//! Carries everything the `no_std` numerical core does not: TOML experiment
//! configs, the sweep runner and its worker pool, CSV/JSON/SVG artifacts,
//! run manifests, and the raw batch dump format. The `ewel` binary is a thin
//! CLI over [`runner::run_experiment`].

pub mod config;
pub mod error;
pub mod plot;
pub mod report;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
pub use runner::{run_experiment, RunOutcome};

/// Resolves the effective seed: the environment override wins.
pub fn effective_seed(config_seed: u64, env_override: Option<&str>) -> Result<u64> {
    match env_override {
        None => Ok(config_seed),
        Some(text) => text
            .trim()
            .parse()
            .map_err(|e| LabError::Config(format!("EWEL_SEED is not a u64: {e}"))),
    }
}
