//! Command-line errors with their process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or unusable input data (exit 2).
    #[error("{0}")]
    Config(String),
    /// Backend unreachable or persistently failing (exit 3).
    #[error("backend error: {0}")]
    Backend(String),
    /// Generation ended short of the target count (exit 4).
    #[error("shortfall: produced {produced} of {requested} synthetic rows (seed {seed})")]
    Shortfall {
        seed: u64,
        produced: usize,
        requested: usize,
    },
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Shortfall { .. } => 4,
            CliError::Other(_) => 1,
        }
    }
}
