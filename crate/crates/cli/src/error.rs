use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T, E = CliError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const MISSING_DEPENDENCY: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("missing {stage} output: {detail}")]
    MissingDependency { stage: String, detail: String },

    #[error("artifact {path} was produced by config {found}, expected {expected}")]
    HashMismatch { path: PathBuf, found: String, expected: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error(transparent)]
    Core(#[from] tda_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn missing(stage: &str, path: &std::path::Path, hint: &str) -> Self {
        CliError::MissingDependency { stage: stage.into(), detail: format!("{} not found; {hint}", path.display()) }
    }

    pub fn exit_code(&self) -> i32 {
        use tda_core::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::MissingDependency { .. } => exit::MISSING_DEPENDENCY,
            CliError::Core(E::Config(_) | E::UnknownDataset(_)) => exit::USAGE,
            CliError::Core(e) if e.is_numerical() => exit::NUMERICAL,
            _ => exit::OTHER,
        }
    }
}
