//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain row-major value. Differentiable computation happens
//! on a [`Tape`]: parameters from a [`ParamStore`] and constants enter as
//! leaves, operations on [`Var`] handles are recorded, and
//! [`Tape::backward_into`] accumulates parameter gradients back into the store.

mod error;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{broadcast_shapes, Gradients, Tape, Var};
pub use tensor::{pad_tensors, Tensor};
