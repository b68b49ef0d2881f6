use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("sparse matrix invariant violated: {0}")]
    InvalidSparse(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    LossNotScalar(Vec<usize>),

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("node index {index} out of range for {n_nodes} nodes")]
    NodeIndexOutOfRange { index: usize, n_nodes: usize },

    #[error("contradictory duplicate edge ({i},{j}): weights {first} vs {second}")]
    ContradictoryEdge {
        i: usize,
        j: usize,
        first: f64,
        second: f64,
    },

    #[error("{path}:{line}: {msg}")]
    ParseError {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("speed series has {rows} rows which is not a whole number of {steps_per_day}-step days")]
    PartialDay { rows: usize, steps_per_day: usize },

    #[error("sample at anchor {anchor} has insufficient history: needs index {needed} but series starts at 0")]
    InsufficientHistory { anchor: usize, needed: i64 },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("checkpoint fingerprint mismatch: checkpoint {expected} vs data {actual}")]
    FingerprintMismatch { expected: String, actual: String },

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid config value for `{key}`: {msg}")]
    InvalidConfig { key: String, msg: String },

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
