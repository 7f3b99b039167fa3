//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a precondition.
    #[error("input error: {0}")]
    Input(String),

    /// The model produced a non-finite value or could not be evaluated.
    #[error("evaluation error{}: {message}", .row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Evaluation { row: Option<usize>, message: String },

    /// An external predictor broke the request/response contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("parse error in {}: {message}", .path.display())]
    Parse { path: PathBuf, message: String },

    /// The requested computation exceeds an exhaustive-enumeration cap.
    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn eval(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Evaluation {
            row,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_capacity(&self) -> bool {
        matches!(self, Error::Capacity(_))
    }
}
