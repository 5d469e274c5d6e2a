use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown label {0:?} (expected OBJ or SUBJ)")]
    UnknownLabel(String),
    #[error("class index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("duplicate sentence id {0:?}")]
    DuplicateId(String),
    #[error("sentence {0:?} has no label")]
    UnlabeledRow(String),
    #[error("sentence {0:?} has empty text")]
    EmptyText(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no embedding for sentence {0:?}")]
    MissingEmbedding(String),
    #[error("no POS distribution for sentence {0:?}")]
    MissingPos(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch for tensor {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("POS row {id:?}: expected 9 values, got {got}")]
    WrongArity { id: String, got: usize },
    #[error("POS row {0:?} has a negative entry")]
    NegativeEntry(String),
    #[error("POS row {0:?} sums to zero")]
    ZeroMass(String),
    #[error("no recorded forward pass")]
    NoRecordedForward,
    #[error("invalid class index {0}")]
    InvalidClass(usize),
    #[error("prediction/gold length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no examples to score")]
    Empty,
    #[error("chain broken: {0}")]
    ChainBroken(String),
    #[error("TF-IDF dimension changed mid-chain: {expected} -> {got}")]
    VocabMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
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

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by user input (bad files, flags, data) rather
    /// than by a defect or an environment failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteGradient(_)
                | Error::DivergedLoss { .. }
                | Error::NoRecordedForward
                | Error::ShapeMismatch(_)
        )
    }
}
