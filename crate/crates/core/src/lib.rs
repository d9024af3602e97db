//! Iterative magnitude pruning and loss-landscape geometry for small
//! multilayer perceptrons.
//!
//! The crate trains maskable MLPs with SGD, runs the family of
//! iterative-magnitude-pruning procedures (weight rewinding, learning-rate
//! rewinding, fine-tuning, random re-initialization, random pruning,
//! one-shot pruning) and measures the geometry of the solutions they reach:
//! Hessian spectra through Lanczos on exact Hessian-vector products,
//! Monte-Carlo basin radii, interpolation barriers, 2-D loss surfaces and
//! distance geometry.
//!
//! Module layout, bottom-up:
//!
//! - [`numerics`]: dense vectors, seeded random streams, plane geometry and
//!   the symmetric tridiagonal eigensolver.
//! - [`autodiff`]: a tensor tape with reverse-over-reverse differentiation.
//! - [`data`]: synthetic spirals, CSV/IDX loaders and batch iteration.
//! - [`model`]: the MLP family and its loss/accuracy entry points.
//! - [`trainer`]: SGD with momentum, weight decay and step decay.
//! - [`pruning`]: masks, projections and the IMP driver with its variants.
//! - [`landscape`]: eigenvalues, radii, volumes, barriers, surfaces.
//! - [`experiment`]: checkpoints, configuration, the pipeline and plotting.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod landscape;
pub mod model;
pub mod numerics;
pub mod pruning;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{LossContext, NetworkSpec, ParamVector};
pub use numerics::{DenseVector, RngStream};
pub use pruning::Mask;
