//! Experiment runner for `branchflow-core`: TOML configs and rule files,
//! Monte Carlo runs against deterministic oracles, convergence sweeps, and
//! CSV / manifest / plot-data output.
//!
//! The binary is a thin wrapper around [`cli::main_with`]; every mode is
//! also callable through [`modes::run`].

pub mod cli;
pub mod config;
pub mod modes;
pub mod oracle;
pub mod output;
pub mod pool;
pub mod rules;

pub use config::{ConfigError, ExperimentSpec, Mode};
pub use modes::{run, RunContext, RunError, RunReport, Status};
pub use pool::Pool;
