use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// The variants map onto the CLI exit-code classes: configuration problems,
/// data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum MoefError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient history: need at least {needed} steps, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MoefError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        MoefError::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MoefError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class (2 config, 3 data, 4 numeric).
    pub fn exit_code(&self) -> i32 {
        match self {
            MoefError::Config(_)
            | MoefError::Schema(_)
            | MoefError::Incompatible(_)
            | MoefError::Contract(_)
            | MoefError::Dimension(_) => 2,
            MoefError::Data(_)
            | MoefError::Domain(_)
            | MoefError::InsufficientHistory { .. }
            | MoefError::UndefinedMetric(_)
            | MoefError::Io { .. } => 3,
            MoefError::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, MoefError>;
