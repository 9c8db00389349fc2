//! Crate-wide error type.
//!
//! One enum with a distinct variant per failure kind so callers (and the
//! CLI exit-code mapping) can match on what went wrong rather than parse
//! message strings.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic bytes: expected {expected:?}, got {got:?}")]
    BadMagic { expected: [u8; 8], got: [u8; 8] },

    #[error("unsupported format version {got} (supported: {supported})")]
    BadVersion { got: u16, supported: u16 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload at byte offset {offset}: {context}")]
    Truncated { offset: u64, context: &'static str },

    #[error("total conflict: combined belief masses have no common support")]
    TotalConflict,

    #[error("metric undefined: {0}")]
    DegenerateMetric(&'static str),

    #[error("training diverged (non-finite loss) at {context}")]
    NanLoss { context: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with pipeline-stage context.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
