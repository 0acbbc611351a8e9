use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no layers")]
    NoLayers,
    #[error("empty layer {0}")]
    EmptyLayer(usize),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("index out of range: {index} >= {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("indices must be strictly ascending (position {0})")]
    UnsortedIndices(usize),
    #[error("sparse gradient has no entries")]
    EmptySparse,
    #[error("zero-length gradients are not supported")]
    ZeroLength,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("compression ratio {0} outside (0, 1]")]
    InvalidRatio(f64),
    #[error("degenerate gradient (zero norm)")]
    DegenerateGradient,
    #[error("invalid network parameters: {0}")]
    InvalidNetwork(String),
    #[error("invalid message spec: {0}")]
    InvalidMessage(String),
    #[error("selection undefined for single worker")]
    SingleWorker,
    #[error("rank {rank} out of range for {workers} workers")]
    BadRank { rank: usize, workers: usize },
    #[error("unequal payload sizes across workers")]
    UnequalPayloads,
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("trace parse error at line {line}: {msg}")]
    TraceParse { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("empty candidate set")]
    NoCandidates,
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
