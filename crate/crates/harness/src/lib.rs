//! Command-line experiments for `iwsgd-core`: TOML configs in, CSV metrics
//! and plain-text logs out.
//!
//! Exit codes: 0 success, 1 a failed check or runtime error, 2 invalid
//! configuration (or a network too large to enumerate), 3 degenerate
//! likelihoods during training.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;

pub use commands::{
    cmd_bounds, cmd_compare, cmd_gradcheck, cmd_train, workers_from_env, BoundsInstance, BoundsTable, CompareOutcome,
    RunResult, WORKERS_ENV,
};
pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
