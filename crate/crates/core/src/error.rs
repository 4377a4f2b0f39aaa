use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidOperand { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("parameter {name}: {msg}")]
    BadParameter { name: String, msg: String },

    #[error("environment factor {name}={value} outside [{low}, {high}]")]
    FactorOutOfRange {
        name: String,
        value: f64,
        low: f64,
        high: f64,
    },

    #[error("action component {name}={value} outside [{low}, {high}]")]
    ActionOutOfRange {
        name: &'static str,
        value: f64,
        low: f64,
        high: f64,
    },

    #[error("family mismatch: expected {expected}, got {got}")]
    FamilyMismatch { expected: String, got: String },

    #[error("dataset record {index}: {msg}")]
    MalformedRecord { index: usize, msg: String },

    #[error("training aborted: non-finite loss at step {step} (batch seed {batch_seed})")]
    NanLoss { step: usize, batch_seed: u64 },

    #[error("{0}")]
    Invalid(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::Invalid(msg.into())
    }
}
