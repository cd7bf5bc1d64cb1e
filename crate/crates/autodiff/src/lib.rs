//! Minimal dense-tensor numerical core with reverse-mode automatic
//! differentiation.
//!
//! The op set is deliberately small: fully-connected layers, 3x3 stride-1
//! same-padding convolutions, nearest-neighbour 2x upsampling, SeLU/ReLU
//! activations, elementwise arithmetic, an L1-mean reduction and a
//! stop-gradient barrier. Everything is generic over [`Real`] so the same
//! graph can run in f32 (training) or f64 (finite-difference testing).

mod checkpoint;
mod error;
mod kernels;
mod real;
mod tape;
mod tensor;

pub use checkpoint::{load_tensors, read_tensors, save_tensors, write_tensors};
pub use error::{CheckpointError, Error, Result};
pub use real::Real;
pub use tape::{Gradients, Tape, VarId};
pub use tensor::Tensor;
