use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("pgm: unsupported magic number {0:?}")]
    PgmMagic(String),

    #[error("pgm: malformed header: {0}")]
    PgmHeader(String),

    #[error("pgm: truncated data: expected {expected} samples, found {found}")]
    PgmTruncated { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in layer {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("action code {0} is not executable")]
    NotExecutable(u8),

    #[error("non-finite loss {loss} at timestep {timestep}")]
    NonFiniteLoss { loss: f64, timestep: u64 },

    #[error("forward cache is stale or missing")]
    StaleCache,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("target directory {0} exists and is not empty")]
    TargetNotEmpty(PathBuf),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
