//! CLI error taxonomy with a stable exit-code contract:
//! 0 success, 1 runtime failure, 2 usage/config error.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// IO failures during a run are runtime errors with path context.
pub fn io_runtime(path: &std::path::Path, err: std::io::Error) -> CliError {
    CliError::Runtime(format!("io error on {}: {err}", path.display()))
}
