//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors produced by projection kernels, the model, data loading and the
/// training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An input value violated a precondition (non-finite component, empty
    /// sequence, out-of-range dimension).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A projection or uncertainty-set specification is malformed
    /// (non-positive radius, p < 1).
    #[error("invalid set spec: {0}")]
    InvalidSpec(String),

    /// A training or sweep configuration is malformed.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A label was not 0 or 1.
    #[error("invalid label: {0}")]
    InvalidLabel(String),

    /// A review score was outside its declared scale.
    #[error("invalid score: {0}")]
    InvalidScore(String),

    /// Tensor shapes do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An iterative solver failed to converge; `residual` is the final
    /// feasibility or movement residual.
    #[error("numerical failure in {what}: residual {residual:.3e} after {iterations} iterations")]
    NumericalFailure {
        what: String,
        residual: f64,
        iterations: usize,
    },

    /// A file could not be parsed; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    /// A binary file had the wrong magic, version or layout.
    #[error("format error: {0}")]
    Format(String),

    /// A document id was missing from an embedding file.
    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
