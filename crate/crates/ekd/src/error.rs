//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are inconsistent for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller violated an API contract (wrong mode, frozen model, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced or consumed non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration or invalid generated-data request.
    #[error("config error: {0}")]
    Config(String),

    /// A file could not be decoded; `offset` is the byte position where
    /// decoding failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A file decoded cleanly but does not match the expected schema,
    /// version, or model dimensions.
    #[error("incompatible data: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Incompatible(_) => 2,
            Error::Numeric(_) => 3,
            _ => 1,
        }
    }
}
