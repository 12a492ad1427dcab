#![no_std]
//! Kolmogorov-Arnold network building blocks for hyperspectral image
//! classification.
//!
//! The crate is `no_std` (it needs `alloc`) and purely computational:
//!
//! - [`spline`]: clamped uniform B-spline bases.
//! - [`tensor`] and [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`layers`]: KAN linear/convolution layers and classical baselines.
//! - [`model`]: the HybridKAN classifier and its classical twin.
//! - [`data`]: HSI cubes, PCA, normalization, patches, splits, synthetic scenes.
//! - [`train`], [`optim`], [`metrics`]: training loop, Adam, OA/AA/kappa.
//!
//! File formats and the command line live in the companion `hskan` crate.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod layers;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod spline;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use layers::{
    ConvLayer, ConvSpec, EdgeFunction, EdgeSet, KanConvLayer, KanLinearLayer, LinearLayer, MaxPool, Module,
};
pub use model::{Model, ModelConfig, ModelKind};
pub use spline::SplineGrid;
pub use tensor::Tensor;
