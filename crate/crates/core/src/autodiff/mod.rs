//! Minimal reverse-mode automatic differentiation over dense `f32` arrays.
//!
//! The operator set is exactly what the material model and its losses use:
//! matrix products, same-padded convolution and max-pooling, a handful of
//! pointwise functions, shape plumbing, Fourier features and pyramid texture
//! lookups. Gradients are checked against finite differences in the test
//! suite.

mod adam;
mod conv;
mod linalg;
mod params;
mod pointwise;
pub(crate) mod sample;
mod shape;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use params::{Param, ParamGrads, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Result, Tensor, TensorError};
