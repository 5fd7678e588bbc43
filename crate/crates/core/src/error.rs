use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty mixture: {0}")]
    EmptyMixture(String),

    #[error("undefined {0}")]
    Undefined(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("iteration diverged in {method}: {advice}")]
    Divergence { method: &'static str, advice: String },

    #[error("checkpoint manifest entry {entry}: {detail}")]
    Manifest { entry: String, detail: String },

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical { context: context.into(), detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }

    /// True for failures caused by non-finite values or diverging iterations.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. } | Error::Divergence { .. })
    }
}
