//! Numeric substrate: dense tensors, a tape for reverse-mode automatic
//! differentiation, a seeded stream RNG, the Adam optimizer and a
//! finite-difference gradient checker.
//!
//! Everything downstream (backbone, fusion, graph refinement, losses) is
//! built from the primitives in [`tape`]. Tensors are immutable values;
//! a fresh [`Tape`] is created per training step and dropped afterwards.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod param;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::TensorError;
pub use gradcheck::{central_difference, max_rel_error, GradCheckReport};
pub use param::{ParamId, ParamStore, Session};
pub use rng::{fnv1a64, Rng};
pub use scalar::{Dtype, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Convenience alias used by every fallible tensor operation.
pub type Result<T> = std::result::Result<T, TensorError>;
