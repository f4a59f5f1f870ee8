use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward called on node {0} which has not been evaluated")]
    BackwardBeforeForward(usize),

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("record {index}: {msg}")]
    Record { index: usize, msg: String },

    #[error("invalid detection: {0}")]
    InvalidDetection(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("reasoning step {step} out of range 1..={total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsatisfiable synthetic world: {0}")]
    Unsatisfiable(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("answer vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
