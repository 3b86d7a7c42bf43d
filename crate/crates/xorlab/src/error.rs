use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension d = {0}: need d >= 3")]
    InvalidDimension(usize),
    #[error("enumeration too large: {noise_dims} noise coordinates exceed the cap of {cap}")]
    EnumerationTooLarge { noise_dims: usize, cap: usize },
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid coordinate {0}: only noise coordinates are allowed")]
    InvalidCoordinate(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("record is missing `{0}`")]
    MissingField(&'static str),
    #[error("zero vector")]
    ZeroVector,
    #[error("non-finite gradient at step {step}, neuron {neuron}")]
    NonFinite { step: u64, neuron: usize },
    #[error("schema mismatch in {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("refusing to overwrite existing output {0} (pass --overwrite)")]
    WouldClobber(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.to_string(), reason: reason.into() }
    }
}
