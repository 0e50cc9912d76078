//! Reverse-mode autodiff over dense NCHW tensors.
//!
//! Provides exactly the operations the frame interpolation networks need:
//! convolutions, bilinear resampling and warping, patch tokenisation,
//! attention products and the usual pointwise functions. Everything is
//! generic over `f32` (training) and `f64` (gradient checks).

pub mod gradcheck;
pub mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use scalar::{gemm, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
