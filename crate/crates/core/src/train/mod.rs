//! Pixel loss, Adam and the epoch loop.

mod adam;
mod fit;
pub mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fit::{compute_gradients, fit, train_step, StepRecord, TrainConfig, TrainLog};
pub use loss::{l1_loss, l1_loss_backward};
