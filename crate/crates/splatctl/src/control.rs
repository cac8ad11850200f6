//! Structural-control scheduler.
//!
//! Every `prune_interval` iterations (once the delay horizon `t_until` has
//! passed) the scheduler prunes, then decides whether the scene has settled
//! enough to grow: if the prune removed fewer than `tau_remove` Gaussians, or
//! a splitting round is already underway, the next batch of parents is split.
//! Rounds cover every Gaussian alive at round start, in randomized batches of
//! `n_batch`; each issued batch pushes the horizon out by `t_delay`. After
//! `tau_split` completed rounds the scheduler stops growing and instead
//! switches the opacity regularizer off — once, permanently — so the final
//! population can polish without pressure. Pruning itself never stops.
//!
//! The scheduler does not touch the Gaussian set directly; a
//! [`SchedulerHost`] performs the edits so the trainer can keep optimizer
//! moments and any bookkeeping in lockstep.

use crate::densify::SplitBatchCursor;
use crate::error::Result;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct ControlConfig {
    /// Cadence of control steps (iterations).
    pub prune_interval: u64,
    /// Opacity threshold: strictly below is removed.
    pub tau_alpha: f64,
    /// A prune removing at least this many Gaussians blocks new growth
    /// (the scene is still reorganizing).
    pub tau_remove: usize,
    /// Parents split per batch.
    pub n_batch: usize,
    /// Iterations the horizon moves out after each issued batch.
    pub t_delay: u64,
    /// Completed splitting rounds after which growth stops for good.
    pub tau_split: u32,
    /// Total training iterations (used by the trainer, carried here so the
    /// control profile is one value).
    pub t_max: u64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            prune_interval: 100,
            tau_alpha: 0.005,
            tau_remove: 2000,
            n_batch: 100_000,
            t_delay: 200,
            tau_split: 6,
            t_max: 30_000,
        }
    }
}

/// Performs the structural edits the scheduler decides on. Implementations
/// must keep any parallel state (optimizer moments) consistent within each
/// call.
pub trait SchedulerHost {
    fn gaussian_count(&self) -> usize;
    /// Remove every Gaussian with activated opacity strictly below `tau`;
    /// return the removed indices, ascending, in pre-removal numbering.
    fn prune(&mut self, tau: f64) -> Result<Vec<usize>>;
    /// Replace each listed parent (ascending indices) with its eight
    /// children; return the number of children appended.
    fn split_batch(&mut self, parents: &[usize]) -> Result<usize>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ControlAction {
    Pruned {
        removed: usize,
    },
    SplitBatch {
        parents: usize,
        children: usize,
        /// True when this batch finished its round.
        round_complete: bool,
    },
    LambdaDisabled,
}

#[derive(Clone, Debug)]
pub struct ControlState {
    /// Iterations completed; [`ControlState::step`] runs at this index, then
    /// advances it.
    pub t: u64,
    /// Completed splitting rounds.
    pub n_split: u32,
    /// Earliest iteration at which the next control step may run.
    pub t_until: u64,
    pub cursor: SplitBatchCursor,
    /// Current regularizer weight; zeroed permanently after the last round.
    pub live_lambda_alpha: f64,
    rng: ChaCha8Rng,
}

impl ControlState {
    pub fn new(lambda_alpha: f64, rng: ChaCha8Rng) -> Self {
        ControlState {
            t: 0,
            n_split: 0,
            t_until: 0,
            cursor: SplitBatchCursor::default(),
            live_lambda_alpha: lambda_alpha,
            rng,
        }
    }

    /// Run the control step for the current iteration (after its
    /// optimization step) and advance the counter. Returns the actions
    /// taken, possibly none.
    pub fn step<H: SchedulerHost>(
        &mut self,
        cfg: &ControlConfig,
        host: &mut H,
    ) -> Result<Vec<ControlAction>> {
        let t = self.t;
        self.t += 1;
        if !(t % cfg.prune_interval == 0 && t >= self.t_until) {
            return Ok(Vec::new());
        }
        let mut actions = Vec::new();
        let removed = host.prune(cfg.tau_alpha)?;
        self.cursor.remap_after_removal(&removed);
        actions.push(ControlAction::Pruned {
            removed: removed.len(),
        });
        let grow = removed.len() < cfg.tau_remove || self.cursor.has_next();
        if grow && host.gaussian_count() > 0 {
            if self.n_split < cfg.tau_split {
                if !self.cursor.has_next() {
                    self.cursor = SplitBatchCursor::new_round(
                        (0..host.gaussian_count()).collect(),
                        cfg.n_batch,
                        &mut self.rng,
                    );
                }
                let batch = self.cursor.take_batch();
                let children = host.split_batch(&batch)?;
                self.cursor.remap_after_removal(&batch);
                self.t_until = t + cfg.t_delay;
                let round_complete = !self.cursor.has_next();
                if round_complete {
                    self.n_split += 1;
                }
                actions.push(ControlAction::SplitBatch {
                    parents: batch.len(),
                    children,
                    round_complete,
                });
            } else if self.live_lambda_alpha != 0.0 {
                self.live_lambda_alpha = 0.0;
                actions.push(ControlAction::LambdaDisabled);
            }
        }
        Ok(actions)
    }
}
