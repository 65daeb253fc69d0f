//! A small reverse-mode differentiation engine over dense `f64` tensors, plus
//! the Adam optimizer.
//!
//! A [`Tape`] records each primitive as it is evaluated. Calling
//! [`Tape::backward`] walks the record in reverse, feeding every node's
//! cotangent through its pullback and summing contributions at fan-out.

mod adam;
mod einsum;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use tape::{gradient, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("invalid contraction spec {0:?}")]
    BadSpec(String),

    #[error("gradient of a non-scalar output with shape {0:?}")]
    NotScalar(Vec<usize>),
}
