use thiserror::Error;

/// Errors raised at tensor-operation boundaries.
///
/// Non-finite values are rejected eagerly: every operation validates its
/// output before the result becomes visible, so a NaN/Inf never propagates
/// silently through a forward pass.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward already ran on this tape")]
    BackwardTwice,

    #[error("backward requires a scalar loss, got {numel} elements")]
    NotScalar { numel: usize },

    #[error("variable does not belong to this tape")]
    TapeMismatch,

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),

    #[error("unknown parameter {0:?}")]
    UnknownParam(String),

    #[error("non-finite gradient for parameter {0:?}")]
    NonFiniteGrad(String),
}
