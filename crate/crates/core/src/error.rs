use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum GftnnError {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("schema error: missing column `{column}`")]
    Schema { column: String },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("balance error: no scenarios of class `{class}`")]
    Balance { class: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("numeric error in {layer}: non-finite value")]
    Numeric { layer: String },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GftnnError {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            GftnnError::InvalidSize(_) => "invalid-size",
            GftnnError::IndexOutOfRange { .. } => "index",
            GftnnError::Data(_) => "data",
            GftnnError::Contract(_) => "contract",
            GftnnError::Dimension(_) => "dimension",
            GftnnError::Schema { .. } => "schema",
            GftnnError::Parse { .. } => "parse",
            GftnnError::Balance { .. } => "balance",
            GftnnError::Split(_) => "split",
            GftnnError::Numeric { .. } => "numeric",
            GftnnError::Diverged { .. } => "diverged",
            GftnnError::Config(_) => "config",
            GftnnError::Checkpoint(_) => "checkpoint",
            GftnnError::Io { .. } => "io",
            GftnnError::Csv(_) => "csv",
            GftnnError::Json(_) => "json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GftnnError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, GftnnError>;
