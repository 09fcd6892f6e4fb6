//! A fully convolutional saliency-detection network built from scratch.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] holds the dense NCHW [`Tensor`] and the numeric kernels
//!   (convolution, transpose convolution, pooling, activations, batch norm).
//! * [`autograd`] records those kernels on a tape and differentiates them,
//!   and ships a central-difference gradient checker.
//! * [`model`] builds the VGG-16 (configuration D) encoder with average pooling,
//!   the transpose-convolution decoder and the sigmoid head, and owns the
//!   parameter store, freezing, weight import and the FCNW1 container.
//! * [`train`] has the mean absolute pixel loss, Adam and the epoch loop.
//! * [`data`] reads and writes PPM/PGM images and manifests and builds batches.
//! * [`eval`] computes precision, recall, F-measure, MAE and PR curves.

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

pub use model::{build_model, Model, ModelConfig, ParamStore};
pub use tensor::{Element, PoolKind, Shape, Tensor};
