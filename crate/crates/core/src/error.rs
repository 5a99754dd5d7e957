//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, UlxError>;

#[derive(Debug, Error)]
pub enum UlxError {
    /// Vector/matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Non-finite values where finite reals are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A validation set does not cover every (sample, language) cell.
    #[error("coverage error: missing {0} (sample, language) entries: {1}")]
    Coverage(usize, String),

    /// A configuration value is outside its documented range.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called before its preconditions were established.
    #[error("state error: {0}")]
    State(String),

    /// A structured file failed to parse; `record` is the offending record
    /// index where that is meaningful.
    #[error("parse error in {file} at record {record}: {message}")]
    Parse {
        file: String,
        record: usize,
        message: String,
    },

    /// A hidden-state provider failed on one path.
    #[error("backend error on path {path}: {message}")]
    Backend { path: String, message: String },

    /// Every path in a run errored out.
    #[error("run error: all paths errored")]
    AllPathsErrored,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
