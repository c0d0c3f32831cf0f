use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// The file is not a recognised format or carries an unsupported version.
    #[error("format error: {0}")]
    Format(String),

    /// The payload is shorter or longer than the header promises.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// A value falls outside the domain of a transform (log of zero, fractional power of a negative).
    #[error("domain error at row {row}, column {col}: {msg}")]
    Domain { row: usize, col: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
