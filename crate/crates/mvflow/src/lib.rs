//! Joint video + motion generative modeling on a self-contained numeric core.
//!
//! The crate builds up in layers:
//!
//! - [`scalar`], [`kernels`], [`tensor`], [`tape`], [`optim`]: dense tensors,
//!   reverse-mode autodiff, and AdamW, generic over f32/f64.
//! - [`motion`], [`video`], [`rope`]: the two modality codecs and the
//!   synchronized 3D rotary positional encoding that ties them together.
//! - [`model`]: the dual-branch diffusion transformer.
//! - [`train`], [`sampling`]: the flow-matching objective, the two-phase
//!   multi-task schedule, and guided Euler sampling.
//! - [`data`], [`eval`]: the synthetic paired corpus and pose/attention
//!   metrics.
//! - [`config`], [`checkpoint`]: run configuration and binary persistence.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod model;
pub mod motion;
pub mod optim;
pub mod params;
pub mod rng;
pub mod rope;
pub mod sampling;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod video;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
