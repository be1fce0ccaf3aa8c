//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, UdcError>;

#[derive(Debug, Error)]
pub enum UdcError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    /// The solution violates the named problem constraint.
    #[error("infeasible solution: {0}")]
    Infeasible(String),

    #[error("no feasible action from the current partial state")]
    NoFeasibleAction,

    #[error("{op} does not support problem kind {kind}")]
    UnsupportedKind { op: &'static str, kind: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("reference objective must be positive, got {0}")]
    NonPositiveReference(f64),

    #[error("{op}: size {got} exceeds limit {limit}")]
    SizeLimit {
        op: &'static str,
        limit: usize,
        got: usize,
    },

    #[error("NaN gradient for parameter {0}")]
    NanGradient(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// An internal contract was broken. This is a bug, never expected input.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
