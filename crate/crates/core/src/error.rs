//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operands whose shapes do not conform.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller broke an API contract (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data or parameters outside their valid domain.
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed file contents.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// A checkpoint was produced under a different encoder configuration.
    #[error("config mismatch in fields: {}", .0.join(", "))]
    ConfigMismatch(Vec<String>),

    /// An object was used before it was ready.
    #[error("state error: {0}")]
    State(String),

    /// NaN or infinity where a finite value was required.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::Validation(_) => "validation",
            Error::Format { .. } => "format",
            Error::ConfigMismatch(_) => "config_mismatch",
            Error::State(_) => "state",
            Error::Numerical(_) => "numerical",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
