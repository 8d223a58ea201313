//! CLI error kinds mapped onto process exit codes.

use thiserror::Error;

/// Exit codes: 0 success, 1 verification failure, 2 usage/config error,
/// 3 runtime solver error.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Solver(String),

    #[error("verification failed:\n{}", .0.join("\n"))]
    Verification(Vec<String>),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn solver(msg: impl Into<String>) -> Self {
        CliError::Solver(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}
