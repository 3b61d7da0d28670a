use std::path::PathBuf;

use thiserror::Error;

/// Failures of a CLI command. Each maps to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    /// A parsed value breaks a data invariant.
    #[error("line {line}, column '{column}': {message}")]
    Cell {
        line: u64,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Core(#[from] mixedindep_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use mixedindep_core::Error as E;
        match self {
            CliError::Io { .. } | CliError::Csv(_) | CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Cell { .. } => 3,
            CliError::Core(e) => match e {
                E::InvalidConfig(_)
                | E::InvalidVine(_)
                | E::InvalidParameter(_)
                | E::DimensionMismatch(_) => 2,
                E::InvalidSample(_)
                | E::EmptySample
                | E::TooFewRows { .. }
                | E::DegenerateVariance => 3,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
