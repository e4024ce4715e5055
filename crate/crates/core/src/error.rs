use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HireError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HireError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("softmax row {row} has no unmasked entry")]
    DegenerateRow { row: usize },

    #[error("cannot normalize a zero-norm vector (row {row})")]
    ZeroNorm { row: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid bounding box {0:?}")]
    InvalidBox([f32; 4]),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("dimension mismatch for {what}: manifest says {manifest}, payload says {payload}")]
    DimMismatch {
        what: String,
        manifest: usize,
        payload: usize,
    },

    #[error("sentence {sentence} links to unknown image {image}")]
    DanglingLink { sentence: String, image: String },

    #[error("image {image}: scene-graph edge ({i}, {j}) out of range for K = {k}")]
    EdgeOutOfRange {
        image: String,
        i: usize,
        j: usize,
        k: usize,
    },

    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("score matrices disagree: {0}")]
    IdMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HireError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HireError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        HireError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
