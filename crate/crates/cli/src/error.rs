use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("missing input {}: {hint}", path.display())]
    Dependency { path: PathBuf, hint: String },

    #[error(transparent)]
    Core(#[from] ewcgan_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Failed(String),
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DEPENDENCY: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const NUMERIC: i32 = 5;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use ewcgan_core::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Dependency { .. } => exit::DEPENDENCY,
            CliError::Core(E::Divergence { .. }) => exit::DIVERGENCE,
            CliError::Core(E::NonFinite { .. } | E::Numeric(_) | E::Estimation(_)) => exit::NUMERIC,
            CliError::Core(E::Input(_)) => exit::USAGE,
            _ => exit::FAILURE,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
