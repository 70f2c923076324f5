//! Neural material appearance model.
//!
//! A material is queried with a uv position, incoming and outgoing
//! directions and a level of detail. A learned offset warps the uv to
//! account for parallax, a latent texture pyramid is sampled at the warped
//! position, and a decoder (an MLP or an Inception-style convolutional
//! network) turns the latent features plus Fourier-encoded inputs into RGB
//! radiance.
//!
//! The crate also contains everything needed to train and evaluate such a
//! material: a small autodiff engine, the Sobel gradient / L1 objective,
//! a procedural heightfield reference generator, the trainer, and a renderer
//! with error reporting.

pub mod autodiff;
mod bytes;
pub mod error;
pub mod hash;
pub mod loss;
pub mod model;
pub mod render;
pub mod synth;
pub mod train;

pub use autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, TensorError, Var};
pub use error::{Error, Result};
pub use model::{DecoderKind, MaterialConfig, NeuralMaterial, Query7D};
pub use synth::{Dataset, HeightfieldMaterial};
pub use train::{Checkpoint, TrainConfig};
