use std::path::PathBuf;

use thiserror::Error;

/// Errors from the command-line layer. Each maps to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("{0}")]
    Model(#[from] treediff::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Data {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for usage and configuration problems, 3 for bad input data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Model(
                treediff::Error::InvalidConfig(_) | treediff::Error::UnknownFunction(_),
            ) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
