//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Inputs outside an operation's domain (empty cloud, bad axis, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An API contract was violated (non-scalar loss, mismatched plan, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// A forward op produced NaN/Inf from finite inputs.
    #[error("numeric error: non-finite value in {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Config file problems: syntax, unknown keys, bad values.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint parsing or shape-mismatch problems.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
