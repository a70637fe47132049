use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left:?}, right is {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("reduction over an empty set in {op}")]
    EmptyReduction { op: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("variable is not recorded on this tape")]
    NotRecorded,
    #[error("gradient requested for a non-scalar output of shape {0:?}")]
    NotScalar((usize, usize)),
    #[error("zero-norm vector at index {index} in {op}")]
    ZeroNorm { op: &'static str, index: usize },
    #[error("cluster {cluster} is degenerate (n_k = {count}); it cannot enter the SURE loss")]
    DegenerateCluster { cluster: usize, count: usize },
    #[error("row {row} of the cluster probability matrix does not sum to 1 (sum = {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("parse error at row {row}, col {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },
    #[error("malformed input: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_step(self, epoch: usize, step: usize) -> Self {
        Error::Training {
            epoch,
            step,
            source: Box::new(self),
        }
    }
}
