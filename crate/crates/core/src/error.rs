use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("visual attention mass {value} at layer {layer}, head {head} is outside [0, 1]")]
    MassOutOfRange {
        layer: usize,
        head: usize,
        value: f32,
    },

    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid decode config: {0}")]
    InvalidConfig(String),

    #[error("invalid visual span: {0}")]
    InvalidVisualSpan(String),

    #[error("invalid synthetic profile: {0}")]
    InvalidProfile(String),

    #[error("context is empty")]
    EmptyContext,

    #[error("context length {len} exceeds backend limit {max}")]
    ContextTooLong { len: usize, max: usize },

    #[error("backend failure: {0}")]
    BackendFailure(String),

    #[error("trace exhausted after {steps} steps")]
    TraceExhausted { steps: u32 },

    #[error("bad magic {found:?}, expected \"DAID\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated header")]
    TruncatedHeader,

    #[error("truncated at step {step}")]
    Truncated { step: u32 },

    #[error("bad trace header: {0}")]
    BadHeader(String),

    #[error("anchor trace requires a DaID result, got {0}")]
    WrongStrategy(&'static str),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
