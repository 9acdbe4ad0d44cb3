use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {}:{line}: {message}", path.display())]
    ConfigSyntax {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config key `{0}` is not recognized")]
    UnknownKey(String),

    #[error("config key `{key}`: {constraint} (got {value:?})")]
    Range {
        key: String,
        constraint: String,
        value: String,
    },

    #[error("missing input {}: run `{producer}` first", path.display())]
    MissingInput { path: PathBuf, producer: &'static str },

    #[error("input file {} does not exist", .0.display())]
    InputNotFound(PathBuf),

    #[error(transparent)]
    Core(#[from] sideinfo_core::Error),
}

impl CliError {
    pub fn range(key: &str, constraint: impl Into<String>, value: impl Into<String>) -> Self {
        CliError::Range {
            key: key.to_string(),
            constraint: constraint.into(),
            value: value.into(),
        }
    }

    /// 1 usage or config, 2 input, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use sideinfo_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::ConfigSyntax { .. } | CliError::UnknownKey(_) | CliError::Range { .. } => 1,
            CliError::MissingInput { .. } | CliError::InputNotFound(_) => 2,
            CliError::Core(E::Config(_)) => 1,
            CliError::Core(E::Numerical(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
