use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("support violation: q[{index}] = {q} but p[{index}] = 0")]
    SupportViolation { index: usize, q: f64 },

    #[error("index {index} out of range for {what} (cardinality {card})")]
    OutOfRange { what: String, index: usize, card: usize },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("zero-total concentration column in {tensor} at column {column}")]
    ZeroColumn { tensor: String, column: usize },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("score {name} = {value} outside [0, 1]")]
    ScoreOutOfRange { name: String, value: f64 },

    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(&'static str),

    #[error("remote evaluator: {0}")]
    Remote(String),

    #[error("malformed evaluator response after {attempts} attempts: {detail}")]
    MalformedResponse { attempts: usize, detail: String },

    #[error("invariant violated at step {step}: {detail}")]
    Invariant { step: usize, detail: String },

    #[error("run log: {0}")]
    Log(String),

    #[error("export: {0}")]
    Export(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
