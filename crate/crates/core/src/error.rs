use std::io;

use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something outside an operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// An iterative solver produced a non-finite value.
    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        /// Objective values recorded before the failure.
        trace: Vec<f64>,
    },

    /// A file could be read but its contents are not a supported image.
    #[error("unsupported or malformed image: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>, trace: Vec<f64>) -> Self {
        Error::Numerical {
            message: msg.into(),
            trace,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
