use std::io;

use thiserror::Error;

/// Errors produced anywhere in the deformation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("loss tensor must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown fixture kind `{kind}` (valid kinds: {valid})")]
    UnknownFixture { kind: String, valid: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures that stem from numerics rather than from input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
