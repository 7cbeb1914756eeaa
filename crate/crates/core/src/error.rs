use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, the reductions and the experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate retraction step: x + h*v has zero norm")]
    DegenerateStep,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("degenerate field: {0}")]
    DegenerateField(String),

    #[error(
        "stiff field at t = {time}: token {token} rotates {rotation:.3e} rad per step after \
         {halvings} step halvings; lower dt or beta"
    )]
    Stiffness {
        time: f64,
        token: usize,
        rotation: f64,
        halvings: u32,
    },

    #[error("threshold {0} is unreachable")]
    Unreachable(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by a malformed configuration or input, as opposed to
    /// failures that happen while running.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidArgument(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
