//! Motion-guided video object segmentation on CPU.
//!
//! The crate provides the local motion guidance operator (with a naive
//! reference and an unfold-based fast path), the global co-attention
//! baseline, a small dual-stream segmentation network with progressive
//! fusion, analytic FLOPs counting, segmentation metrics, a synthetic
//! moving-shapes dataset and the training and evaluation harness.

pub mod attention;
pub mod bench;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod synth;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{Gradient, Real, Shape, Tensor};
