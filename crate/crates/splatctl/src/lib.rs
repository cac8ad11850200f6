//! Differentiable 3D Gaussian splatting trainer with structural count control.
//!
//! The model is a set of anisotropic 3D Gaussians optimized against posed
//! images through a CPU rasterizer with a full analytic backward pass. Model
//! size is steered by a single opacity-regularization weight: an octree-style
//! uniform split grows the set in scheduled rounds while an L1 penalty on
//! activated opacities drives redundant Gaussians below the prune threshold.
//! Raising the weight trades Gaussian count against fidelity monotonically,
//! so one knob selects the operating point on the count/quality curve.
//!
//! Module map:
//! - [`core`]: raw parameter arrays, activations, covariance assembly, cameras
//! - [`render`]: EWA projection, front-to-back compositing, analytic backward
//! - [`loss`]: L1 + D-SSIM image loss, opacity regularizer, PSNR
//! - [`densify`] / [`sparsify`]: uniform 8-way split and opacity pruning
//! - [`control`]: the prune/split/shutoff scheduler state machine
//! - [`optim`]: per-group Adam with topology-synchronized moments
//! - [`io`]: datasets, synthetic scenes, PLY interchange, run configuration
//! - [`harness`]: training loop, evaluation, sweeps, diagnostics

pub mod control;
pub mod core;
pub mod densify;
pub mod error;
pub mod harness;
pub mod image;
pub mod io;
pub mod loss;
pub mod optim;
pub mod render;
pub mod sh;
pub mod sparsify;

pub use error::{Error, Result};
