//! Optimization of a [`NeuralMaterial`](crate::NeuralMaterial) against a
//! reference dataset.

mod batch;
mod checkpoint;
mod config;
mod trainer;

pub use batch::{cut_tile, is_held_out, make_batch, Split, Tile};
pub use checkpoint::{Checkpoint, RngState};
pub use config::{TrainConfig, DEFAULT_INCEPTION_ITERATIONS, DEFAULT_ITERATIONS};
pub use trainer::{
    check_compatible, resume, train, BatchGradients, StepRecord, Trainer, ValidationRecord, CHECKPOINT_FILE,
};
