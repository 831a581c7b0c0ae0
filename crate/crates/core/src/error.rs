use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the engine's library API.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("quality check failed: {}", format_reasons(.0))]
    Quality(Vec<ChipRejection>),

    #[error("config error: {0}")]
    Config(String),

    #[error("storage error at {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One rejected enrollment chip and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChipRejection {
    pub chip: String,
    pub reasons: Vec<String>,
}

fn format_reasons(list: &[ChipRejection]) -> String {
    list.iter()
        .map(|r| format!("{}: {}", r.chip, r.reasons.join(", ")))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) => 2,
            Error::Conflict(_) => 3,
            Error::NotFound(_) => 4,
            Error::Quality(_) => 5,
            Error::BackendUnavailable(_) => 6,
            Error::Storage { .. } | Error::Image(_) | Error::Json(_) | Error::Io(_) => 1,
        }
    }

    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
