use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the classifier pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint: bad magic (expected \"ATNF1\")")]
    BadMagic,

    #[error("checkpoint: truncated {0}")]
    Truncated(&'static str),

    #[error(
        "checkpoint: payload length mismatch (manifest expects {expected} bytes, found {actual})"
    )]
    LengthMismatch { expected: usize, actual: usize },

    #[error("checkpoint: malformed manifest: {0}")]
    Manifest(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
