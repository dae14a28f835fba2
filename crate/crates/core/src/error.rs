//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// A required CSV column is missing or the header is unusable.
    #[error("schema error: {0}")]
    Schema(String),

    /// A persisted record could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An operation was called outside its contract (bad shapes aside,
    /// which panic at the graph layer).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint file is not in the expected format.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// Non-finite values or other numeric failures.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the CLI: 1 check failure, 2 usage/config, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            Error::Schema(_) | Error::Config(_) | Error::Contract(_) | Error::Format(_) => 2,
            Error::Parse { .. } => 2,
            Error::Numeric(_) => 1,
        }
    }
}
