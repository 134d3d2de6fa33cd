use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("layer {layer}: {source}")]
    Layer { layer: usize, source: Box<Error> },

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate likelihoods: every sample has zero probability")]
    DegenerateLikelihood,

    #[error(
        "degenerate likelihoods for example {example} (batch position {position}): all {samples} samples underflowed"
    )]
    DegenerateExample {
        example: usize,
        position: usize,
        samples: usize,
    },

    #[error("{degenerate} of {replicates} Monte Carlo replicates were degenerate (limit 1%)")]
    DegenerateReplicates { degenerate: usize, replicates: usize },

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },

    #[error("train phase requires a noise draw covering every noise layer")]
    MissingDraw,

    #[error("capacity exceeded: {what} needs {required}, limit is {limit}")]
    Capacity {
        what: &'static str,
        required: u128,
        limit: u128,
    },

    #[error("exact enumeration supports bernoulli noise only")]
    UnsupportedMode,

    #[error("budget exhausted: step needs {needed} forward passes, {remaining} remain")]
    BudgetExhausted { needed: u64, remaining: u64 },

    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated, expected {expected} bytes but found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },

    #[error("record count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn at_layer(self, layer: usize) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }
}
