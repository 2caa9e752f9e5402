use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit codes. Part of the command-line contract.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const UNCERTAIN: i32 = 10;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        source: btv_core::Error,
    },

    #[error(transparent)]
    Core(#[from] btv_core::Error),

    #[error("{0}")]
    Numeric(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Wraps an error raised while reading `path`.
    pub fn input(path: &Path, source: btv_core::Error) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use btv_core::Error as E;
        let core = match self {
            CliError::Config(_) => return exit::CONFIG,
            CliError::Numeric(_) => return exit::NUMERIC,
            CliError::Input { source, .. } => source,
            CliError::Core(e) => e,
        };
        match core {
            E::Training { .. } | E::Optimization { .. } => exit::NUMERIC,
            E::State(_) => exit::INTERNAL,
            _ => exit::CONFIG,
        }
    }
}
