use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty ball")]
    EmptyBall,
    #[error("cannot split pure ball")]
    PureBall,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid threshold {0}: must lie in (0.5, 1.0]")]
    InvalidThreshold(f64),
    #[error("unencodable value {value}: must lie in [0, {max}]")]
    Unencodable { value: u64, max: u64 },
    #[error("invalid encoding: bits per feature must be in 1..=16, got {0}")]
    InvalidBits(u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shots must be at least 1")]
    ZeroShots,
    #[error("invalid entry point {node} for layer {layer}")]
    InvalidEntryPoint { node: usize, layer: usize },
    #[error("node {0} already inserted")]
    DuplicateNode(usize),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("index empty")]
    IndexEmpty,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("{path}: line {line}, column {column}: {message}")]
    Data {
        path: String,
        line: u64,
        column: String,
        message: String,
    },
    #[error("invalid bounds for feature {feature}: min {min} must be below max {max}")]
    InvalidBounds { feature: usize, min: f64, max: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
