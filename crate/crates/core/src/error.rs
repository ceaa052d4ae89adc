use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("gradient check: non-finite function value at parameter {index} ({side} perturbation)")]
    NonFiniteProbe { index: usize, side: &'static str },

    #[error("class index {index} out of range 1..={classes}")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("proportion vector is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("proportion vector has an entry outside [0, 1]: {value}")]
    InvalidProportion { value: f64 },

    #[error("zero-norm feature vector has no defined cosine similarity")]
    ZeroNorm,

    #[error("similarity {0} outside [0, 1]")]
    SimilarityOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("date `{date}` has {available} instances, fewer than bag size {bag_size}")]
    DateTooSmall {
        date: String,
        available: usize,
        bag_size: usize,
    },

    #[error("unknown date label `{0}`")]
    UnknownDate(String),

    #[error("need at least 2 bags to draw a pair, got {0}")]
    TooFewBags(usize),

    #[error("non-finite loss at stage {stage} step {step}")]
    NonFiniteLoss { stage: u8, step: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("no evaluable instances")]
    NoEvaluableInstances,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
