use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] iwsgd_core::Error),

    /// A verification command ran to completion and its check failed.
    #[error("{0}")]
    Check(String),
}

impl HarnessError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, e: impl ToString) -> Self {
        HarnessError::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }

    /// Process exit code: 2 for bad configuration or an unenumerable
    /// network, 3 for degenerate likelihoods, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use iwsgd_core::Error as E;
        match self {
            HarnessError::Config { .. } | HarnessError::Parse { .. } => 2,
            HarnessError::Core(E::Capacity { .. } | E::UnsupportedMode) => 2,
            HarnessError::Core(
                E::DegenerateExample { .. } | E::DegenerateLikelihood | E::DegenerateReplicates { .. },
            ) => 3,
            _ => 1,
        }
    }
}
