use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular system at iteration {iteration}: {context}")]
    Singular { iteration: usize, context: String },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("non-finite objective or gradient after {iterations} iterations")]
    NonFinite {
        iterations: usize,
        /// Last iterate at which value and gradient were finite.
        last_good: Vec<f64>,
    },

    #[error("line search: {0}")]
    LineSearch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("model selection failed: {0}")]
    Selection(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
