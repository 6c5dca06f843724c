use thiserror::Error;

/// Errors raised by the path-space, measure, stopping and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// `|lambda| * sqrt(h) > 1`: the drifted step probabilities leave [0, 1].
    #[error("invalid drift: bound {bound} with step {step} gives bound*sqrt(h) = {product} > 1")]
    InvalidDrift { bound: f64, step: f64, product: f64 },

    #[error("tree depth {depth} exceeds cap {cap}")]
    DepthExceeded { depth: usize, cap: usize },

    #[error("CFL condition violated: {0}")]
    Cfl(String),

    #[error("non-finite value at level {level}, node {node}")]
    NonFinite { level: usize, node: usize },

    #[error("operator failed at level {level}, node {node}: {reason}")]
    OperatorFailure {
        level: usize,
        node: usize,
        reason: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
