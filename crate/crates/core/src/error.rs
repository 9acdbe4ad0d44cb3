use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the curation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A malformed line in one of the text formats.
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    /// A label or parent link that points at nothing.
    #[error("referential integrity: {0}")]
    Reference(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("cycle detected in taxonomy at node {0}")]
    Cycle(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("classes without samples: {0:?}")]
    EmptyClasses(Vec<usize>),

    /// Training produced a non-finite loss or parameter.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A statistic that has no value on the given input (e.g. AUC with one class).
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
