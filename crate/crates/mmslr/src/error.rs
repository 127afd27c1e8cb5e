use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: {reason}")]
    InvalidInput { op: &'static str, reason: String },
    #[error("log of non-positive value {value}")]
    LogDomain { value: f64 },
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
    #[error("CTC target infeasible: needs {required} frames, logits have {available}")]
    CtcInfeasible { required: usize, available: usize },
    #[error("unknown token id {id} (vocab size {vocab})")]
    UnknownToken { id: usize, vocab: usize },
    #[error("unknown gloss '{gloss}' not present in training vocabulary")]
    UnknownGloss { gloss: String },
    #[error("feature file {path}: {reason}")]
    FeatureFile { path: String, reason: String },
    #[error("manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error("sample '{id}': {reason}")]
    Sample { id: String, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
