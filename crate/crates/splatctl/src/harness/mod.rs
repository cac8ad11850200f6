//! Training orchestration, evaluation, the λ sweep, and diagnostics.

pub mod diag;
pub mod eval;
pub mod sweep;
pub mod train;

pub use diag::diagnostics;
pub use eval::eval_views;
pub use sweep::{sweep, SweepRecord};
pub use train::{train, write_run_outputs, TrainOutcome};

use crate::control::ControlAction;
use crate::core::GaussianSet;
use crate::loss::LossBreakdown;

pub const HISTOGRAM_BINS: usize = 64;

/// Uniform histogram of activated opacities over [0, 1].
pub fn opacity_histogram(set: &GaussianSet) -> [usize; HISTOGRAM_BINS] {
    let mut bins = [0usize; HISTOGRAM_BINS];
    for i in 0..set.len() {
        let a = set.activated_opacity(i);
        let b = ((a * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[b] += 1;
    }
    bins
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub iteration: u64,
    pub n_gaussians: usize,
    pub loss: LossBreakdown,
    pub mean_scale: f64,
    pub mean_opacity: f64,
    pub histogram: [usize; HISTOGRAM_BINS],
}

/// One recorded control event: the action plus the population right after it.
#[derive(Clone, Debug)]
pub struct EventRow {
    pub iteration: u64,
    pub action: ControlAction,
    pub n_after: usize,
    pub lambda_alpha: f64,
    /// Completed rounds after this event (for round-completion rows).
    pub n_split: u32,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunMetrics {
    pub train_psnr: f64,
    pub train_ssim: f64,
    pub test_psnr: f64,
    pub test_ssim: f64,
}
