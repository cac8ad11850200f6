//! The training loop.
//!
//! Per iteration: sample one training view (seeded), render, evaluate the
//! full objective, backpropagate, take an Adam step, maybe promote the SH
//! degree, then run the control step — structural edits are mirrored into
//! the optimizer inside the host so moments never drift out of alignment.
//! A population collapse ends the run with a flag rather than an error.

use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{opacity_histogram, Checkpoint, EventRow, RunMetrics};
use crate::control::{ControlAction, ControlState, SchedulerHost};
use crate::core::GaussianSet;
use crate::error::{io_err, Error, Result};
use crate::io::config::RunConfig;
use crate::io::{self, Dataset};
use crate::loss::total_loss_with_grad;
use crate::optim::{maybe_promote_sh, Adam};
use crate::render::{rasterize_backward, rasterize_forward, RasterConfig};
use crate::{densify, sparsify};

/// RNG stream ids carved out of the run seed, so view sampling and batch
/// shuffling stay independent of each other.
const STREAM_VIEWS: u64 = 1;
const STREAM_CONTROL: u64 = 2;

struct TrainerHost<'a> {
    set: &'a mut GaussianSet,
    adam: &'a mut Adam,
    /// Min activated opacity captured right after each prune this step,
    /// before any split batch runs: split children of a marginal parent may
    /// legally sit below the prune threshold until the next prune event, so
    /// a later snapshot would not measure what pruning left behind.
    post_prune_min_alpha: Vec<f64>,
}

impl SchedulerHost for TrainerHost<'_> {
    fn gaussian_count(&self) -> usize {
        self.set.len()
    }

    fn prune(&mut self, tau: f64) -> Result<Vec<usize>> {
        let edit = sparsify::prune(self.set, tau)?;
        self.adam.sync_topology(&edit)?;
        if !self.set.is_empty() {
            let min_alpha = (0..self.set.len())
                .map(|i| self.set.activated_opacity(i))
                .fold(f64::INFINITY, f64::min);
            self.post_prune_min_alpha.push(min_alpha);
        }
        Ok(edit.removed)
    }

    fn split_batch(&mut self, parents: &[usize]) -> Result<usize> {
        let edit = densify::split_parents(self.set, parents)?;
        self.adam.sync_topology(&edit)?;
        Ok(edit.appended)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub set: GaussianSet,
    pub collapsed: bool,
    /// Iteration the run ended at (`t_max`, or earlier on collapse).
    pub end_iteration: u64,
    pub events: Vec<EventRow>,
    /// Minimum activated opacity right after each prune event, captured
    /// before any split in the same control step (only while the population
    /// is nonempty).
    pub post_prune_min_alpha: Vec<(u64, f64)>,
    pub checkpoints: Vec<Checkpoint>,
    /// Mean activated opacity after every iteration.
    pub opacity_trace: Vec<f64>,
    pub lambda_disabled_at: Option<u64>,
    pub wall_s: f64,
    pub metrics: RunMetrics,
    pub final_lambda_alpha: f64,
}

pub fn train(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let start = Instant::now();
    if dataset.cameras.is_empty() || dataset.train_indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bbox = camera_bbox(dataset);
    let mut set = io::init_gaussians(
        &dataset.init_points,
        &dataset.init_colors,
        cfg.init_fallback_points,
        cfg.seed,
        cfg.max_sh_degree,
        bbox,
    );
    let n_init = set.len();
    let extent = io::scene_extent(&dataset.cameras);
    let mut adam = Adam::new(cfg.optim_config(), &set, extent);
    let control_cfg = cfg.control_config(n_init);
    let loss_cfg = cfg.loss_config();
    let raster = RasterConfig::default();

    let mut view_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    view_rng.set_stream(STREAM_VIEWS);
    let mut control_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    control_rng.set_stream(STREAM_CONTROL);
    let mut state = ControlState::new(cfg.lambda_alpha, control_rng);

    let mut events = Vec::new();
    let mut post_prune_min_alpha = Vec::new();
    let mut checkpoints = Vec::new();
    let mut opacity_trace = Vec::with_capacity(cfg.t_max as usize);
    let mut lambda_disabled_at = None;
    let mut collapsed = set.is_empty();
    let mut end_iteration = 0;

    for t in 0..cfg.t_max {
        if collapsed {
            break;
        }
        end_iteration = t + 1;
        let view = dataset.train_indices[view_rng.gen_range(0..dataset.train_indices.len())];
        let cam = &dataset.cameras[view];
        let buffers = rasterize_forward(&set, cam, &raster)?;
        let (breakdown, dimage, op_grad) = total_loss_with_grad(
            &buffers.image,
            &dataset.images[view],
            &set,
            &loss_cfg,
            state.live_lambda_alpha,
        )?;
        let mut grads = rasterize_backward(&buffers, &set, cam, &dimage, &raster)?;
        for (g, extra) in grads.opacity_logits.iter_mut().zip(&op_grad) {
            *g += extra;
        }
        adam.step(&mut set, &grads)?;
        maybe_promote_sh(&mut set, t, cfg.sh_promote_interval);

        let n_before = set.len();
        let (actions, step_minima) = {
            let mut host = TrainerHost {
                set: &mut set,
                adam: &mut adam,
                post_prune_min_alpha: Vec::new(),
            };
            let actions = state.step(&control_cfg, &mut host)?;
            (actions, host.post_prune_min_alpha)
        };
        for min_alpha in step_minima {
            post_prune_min_alpha.push((t, min_alpha));
        }
        let mut n_running = n_before;
        for action in actions {
            match &action {
                ControlAction::Pruned { removed } => {
                    n_running -= removed;
                }
                ControlAction::SplitBatch {
                    parents, children, ..
                } => {
                    n_running = n_running - parents + children;
                }
                ControlAction::LambdaDisabled => {
                    lambda_disabled_at = Some(t);
                }
            }
            events.push(EventRow {
                iteration: t,
                action,
                n_after: n_running,
                lambda_alpha: state.live_lambda_alpha,
                n_split: state.n_split,
            });
        }
        debug_assert_eq!(n_running, set.len());
        opacity_trace.push(set.mean_activated_opacity());
        if set.is_empty() {
            collapsed = true;
        }
        if t % cfg.checkpoint_interval == 0 || t + 1 == cfg.t_max || collapsed {
            checkpoints.push(Checkpoint {
                iteration: t,
                n_gaussians: set.len(),
                loss: breakdown,
                mean_scale: set.mean_activated_scale(),
                mean_opacity: set.mean_activated_opacity(),
                histogram: opacity_histogram(&set),
            });
        }
    }

    let metrics = final_metrics(&set, dataset, cfg)?;
    Ok(TrainOutcome {
        set,
        collapsed,
        end_iteration,
        events,
        post_prune_min_alpha,
        checkpoints,
        opacity_trace,
        lambda_disabled_at,
        wall_s: start.elapsed().as_secs_f64(),
        metrics,
        final_lambda_alpha: state.live_lambda_alpha,
    })
}

fn camera_bbox(dataset: &Dataset) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for cam in &dataset.cameras {
        let c = cam.center();
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    if !(lo.x.is_finite() && hi.x.is_finite()) {
        return (Vector3::repeat(-1.0), Vector3::repeat(1.0));
    }
    (lo, hi)
}

fn final_metrics(set: &GaussianSet, dataset: &Dataset, cfg: &RunConfig) -> Result<RunMetrics> {
    let loss_cfg = cfg.loss_config();
    let raster = RasterConfig::default();
    let (_, train_psnr, train_ssim) =
        super::eval_views(set, dataset, &dataset.train_indices, &loss_cfg, &raster)?;
    let (_, test_psnr, test_ssim) =
        super::eval_views(set, dataset, &dataset.test_indices, &loss_cfg, &raster)?;
    Ok(RunMetrics {
        train_psnr,
        train_ssim,
        test_psnr,
        test_ssim,
    })
}

fn event_name(action: &ControlAction) -> &'static str {
    match action {
        ControlAction::Pruned { .. } => "prune",
        ControlAction::SplitBatch { .. } => "split_batch",
        ControlAction::LambdaDisabled => "lambda_disabled",
    }
}

fn event_count(action: &ControlAction) -> usize {
    match action {
        ControlAction::Pruned { removed } => *removed,
        ControlAction::SplitBatch { parents, .. } => *parents,
        ControlAction::LambdaDisabled => 0,
    }
}

/// Write every artifact of a finished run under `out_dir`.
pub fn write_run_outputs(out_dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    std::fs::write(out_dir.join("resolved.toml"), cfg.to_toml())
        .map_err(io_err(out_dir.join("resolved.toml")))?;

    let mut ck = String::from(
        "iteration,n_gaussians,loss_total,loss_l1,loss_dssim,loss_opacity,mean_scale,mean_opacity",
    );
    for b in 0..super::HISTOGRAM_BINS {
        ck.push_str(&format!(",hist_{b}"));
    }
    ck.push('\n');
    for c in &outcome.checkpoints {
        ck.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            c.iteration,
            c.n_gaussians,
            c.loss.total,
            c.loss.l1,
            c.loss.dssim,
            c.loss.opacity_l1,
            c.mean_scale,
            c.mean_opacity
        ));
        for b in c.histogram {
            ck.push_str(&format!(",{b}"));
        }
        ck.push('\n');
    }
    std::fs::write(out_dir.join("checkpoints.csv"), ck)
        .map_err(io_err(out_dir.join("checkpoints.csv")))?;

    let mut ev = String::from("iteration,event,count,n_gaussians,lambda_alpha\n");
    for e in &outcome.events {
        ev.push_str(&format!(
            "{},{},{},{},{}\n",
            e.iteration,
            event_name(&e.action),
            event_count(&e.action),
            e.n_after,
            e.lambda_alpha
        ));
        if matches!(
            e.action,
            ControlAction::SplitBatch {
                round_complete: true,
                ..
            }
        ) {
            ev.push_str(&format!(
                "{},round_complete,{},{},{}\n",
                e.iteration, e.n_split, e.n_after, e.lambda_alpha
            ));
        }
    }
    if outcome.collapsed {
        ev.push_str(&format!(
            "{},collapse,0,0,{}\n",
            outcome.end_iteration.saturating_sub(1),
            outcome.final_lambda_alpha
        ));
    }
    std::fs::write(out_dir.join("events.csv"), ev).map_err(io_err(out_dir.join("events.csv")))?;

    let mut tr = String::from("iteration,mean_opacity\n");
    for (t, v) in outcome.opacity_trace.iter().enumerate() {
        tr.push_str(&format!("{t},{v}\n"));
    }
    std::fs::write(out_dir.join("opacity_trace.csv"), tr)
        .map_err(io_err(out_dir.join("opacity_trace.csv")))?;

    crate::io::ply::export_ply(&outcome.set, &out_dir.join("final.ply"))?;

    let m = &outcome.metrics;
    let summary = format!(
        "n_gaussians,collapsed,wall_s,train_psnr,train_ssim,test_psnr,test_ssim\n{},{},{},{},{},{},{}\n",
        outcome.set.len(),
        outcome.collapsed,
        outcome.wall_s,
        m.train_psnr,
        m.train_ssim,
        m.test_psnr,
        m.test_ssim
    );
    std::fs::write(out_dir.join("summary.csv"), summary)
        .map_err(io_err(out_dir.join("summary.csv")))?;
    Ok(())
}

/// Render the test views of the final model as PNGs plus exact `.f64` dumps,
/// and write `metrics.csv` with per-view rows.
pub fn write_final_renders(out_dir: &Path, outcome: &TrainOutcome, dataset: &Dataset, cfg: &RunConfig) -> Result<()> {
    let renders = out_dir.join("renders");
    std::fs::create_dir_all(&renders).map_err(io_err(&renders))?;
    let raster = RasterConfig::default();
    let loss_cfg = cfg.loss_config();
    let (views, mean_psnr, mean_ssim) = super::eval_views(
        &outcome.set,
        dataset,
        &dataset.test_indices,
        &loss_cfg,
        &raster,
    )?;
    let mut csv = String::from("scope,index,psnr,ssim\n");
    for v in &views {
        csv.push_str(&format!("test_view,{},{},{}\n", v.index, v.psnr, v.ssim));
        let img = rasterize_forward(&outcome.set, &dataset.cameras[v.index], &raster)?.image;
        let png = renders.join(format!("test_{:03}.png", v.index));
        io::write_png(&png, &img)?;
        io::write_f64_dump(&png.with_extension("f64"), &img)?;
    }
    csv.push_str(&format!("test_mean,,{mean_psnr},{mean_ssim}\n"));
    std::fs::write(out_dir.join("metrics.csv"), csv)
        .map_err(io_err(out_dir.join("metrics.csv")))?;
    Ok(())
}
