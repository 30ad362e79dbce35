use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GitsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GitsError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("generation failed on trajectory {trajectory}: {reason}")]
    Generation { trajectory: usize, reason: String },

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("payload length mismatch: manifest implies {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("start index {k} outside admissible range [{lo}, {hi}]")]
    InvalidStart { k: usize, lo: usize, hi: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("no admissible start index: t_count={t_count}, history_len={history_len}")]
    EmptyCandidates { t_count: usize, history_len: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("invalid budget K={budget} for {available} candidates")]
    Budget { budget: usize, available: usize },

    #[error("index {0} was already folded into the coverage state")]
    DuplicateIndex(usize),

    #[error("index {0} is not an admissible candidate")]
    NotCandidate(usize),

    #[error("metric error: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
