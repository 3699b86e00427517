//! Crate-wide error type.
//!
//! Errors fall into two families that the CLI maps to distinct exit codes:
//! problems with user-supplied input (bad paths, malformed files, invalid
//! configuration) and internal failures (broken contracts, numerical
//! blow-ups). `Error::exit_code` encodes that split.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A caller violated an operation's contract (shape mismatch, unknown
    /// node id, out-of-range hyperparameter, ...). These indicate bugs in
    /// the calling code, not bad user data.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Structurally valid input that an operation cannot produce a result
    /// for (empty window, sequence shorter than a convolution window, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A gradient, loss, or parameter turned NaN/Inf.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A metric is undefined on the given inputs (e.g. AUC with one class).
    #[error("undefined metric: {0}")]
    Metric(String),

    /// User-supplied data could not be parsed or failed validation.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// Process exit code the CLI should report for this error:
    /// 1 for user errors, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) => 1,
            Error::Contract(_)
            | Error::Degenerate(_)
            | Error::NonFinite(_)
            | Error::Metric(_) => 2,
        }
    }
}

/// Shorthand for building a contract-violation error.
pub fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

/// Shorthand for building a degenerate-input error.
pub fn degenerate(msg: impl Into<String>) -> Error {
    Error::Degenerate(msg.into())
}
