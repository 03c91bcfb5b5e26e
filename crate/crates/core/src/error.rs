use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid target: window t={t}, depth {depth} reaches past the recorded episode")]
    InvalidTarget { t: usize, depth: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("empty batch: every (sample, head) entry is masked")]
    EmptyBatch,

    #[error("non-finite update: {0}")]
    NonFinite(String),

    #[error("step called on a finished episode")]
    StepAfterDone,

    #[error("instance too large for path enumeration: {states} states, horizon {horizon}")]
    InstanceTooLarge { states: usize, horizon: usize },

    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format { line, msg: msg.into() }
    }
}
