//! Flat run configuration (TOML key-value file).
//!
//! Every tuning constant is a documented key. Unknown keys are rejected
//! outright — a typo must not silently fall back to a default. Two profiles
//! seed the defaults: `paper` (full-scale constants) and `desk` (small
//! synthetic scenes; `tau_remove` and `n_batch` derive from the initial
//! Gaussian count unless set explicitly). Precedence: profile defaults, then
//! file values, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthConfig;
use crate::control::ControlConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::optim::OptimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

/// Parsed key-value file / CLI overrides: every field optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,

    pub lambda_w: Option<f64>,
    pub lambda_alpha: Option<f64>,
    pub ssim_window: Option<usize>,
    pub ssim_sigma: Option<f64>,

    pub prune_interval: Option<u64>,
    pub tau_alpha: Option<f64>,
    pub tau_remove: Option<usize>,
    pub n_batch: Option<usize>,
    pub t_delay: Option<u64>,
    pub tau_split: Option<u32>,
    pub t_max: Option<u64>,

    pub position_lr_init: Option<f64>,
    pub position_lr_final: Option<f64>,
    pub log_scale_lr: Option<f64>,
    pub rotation_lr: Option<f64>,
    pub opacity_lr: Option<f64>,
    pub sh_dc_lr: Option<f64>,
    pub sh_rest_divisor: Option<f64>,

    pub max_sh_degree: Option<usize>,
    pub sh_promote_interval: Option<u64>,
    pub checkpoint_interval: Option<u64>,
    pub init_fallback_points: Option<usize>,

    pub synth_k: Option<usize>,
    pub synth_views: Option<usize>,
    pub synth_resolution: Option<usize>,
}

macro_rules! take_over {
    ($base:expr, $over:expr, $($field:ident),+ $(,)?) => {
        $( if $over.$field.is_some() { $base.$field = $over.$field.clone(); } )+
    };
}

impl RawConfig {
    /// Field-wise overlay: values present in `over` win.
    pub fn merged_with(mut self, over: &RawConfig) -> RawConfig {
        take_over!(
            self, over, profile, seed, data_dir, out_dir, lambda_w, lambda_alpha, ssim_window,
            ssim_sigma, prune_interval, tau_alpha, tau_remove, n_batch, t_delay, tau_split, t_max,
            position_lr_init, position_lr_final, log_scale_lr, rotation_lr, opacity_lr, sh_dc_lr,
            sh_rest_divisor, max_sh_degree, sh_promote_interval, checkpoint_interval,
            init_fallback_points, synth_k, synth_views, synth_resolution,
        );
        self
    }
}

/// Fully resolved run configuration. `tau_remove` / `n_batch` stay optional:
/// absent values derive from the initial Gaussian count at training start.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,

    pub lambda_w: f64,
    pub lambda_alpha: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,

    pub prune_interval: u64,
    pub tau_alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_remove: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_batch: Option<usize>,
    pub t_delay: u64,
    pub tau_split: u32,
    pub t_max: u64,

    pub position_lr_init: f64,
    pub position_lr_final: f64,
    pub log_scale_lr: f64,
    pub rotation_lr: f64,
    pub opacity_lr: f64,
    pub sh_dc_lr: f64,
    pub sh_rest_divisor: f64,

    pub max_sh_degree: usize,
    pub sh_promote_interval: u64,
    pub checkpoint_interval: u64,
    pub init_fallback_points: usize,

    pub synth_k: usize,
    pub synth_views: usize,
    pub synth_resolution: usize,
}

impl RunConfig {
    /// Desk-profile defaults: small synthetic scenes, short schedule,
    /// count-derived control thresholds.
    pub fn desk() -> RunConfig {
        RunConfig {
            profile: Profile::Desk,
            seed: 42,
            data_dir: None,
            out_dir: None,
            lambda_w: 0.2,
            lambda_alpha: 1e-5,
            ssim_window: 11,
            ssim_sigma: 1.5,
            prune_interval: 100,
            tau_alpha: 0.005,
            tau_remove: None,
            n_batch: None,
            t_delay: 200,
            tau_split: 6,
            t_max: 8_000,
            position_lr_init: 1.6e-4,
            position_lr_final: 1.6e-6,
            log_scale_lr: 5e-3,
            rotation_lr: 1e-3,
            opacity_lr: 5e-2,
            sh_dc_lr: 2.5e-3,
            sh_rest_divisor: 20.0,
            max_sh_degree: 3,
            sh_promote_interval: 1000,
            checkpoint_interval: 500,
            init_fallback_points: 100,
            synth_k: 64,
            synth_views: 24,
            synth_resolution: 128,
        }
    }

    /// Paper-profile defaults: full-scale schedule and absolute control
    /// thresholds.
    pub fn paper() -> RunConfig {
        RunConfig {
            profile: Profile::Paper,
            lambda_alpha: 3e-7,
            tau_remove: Some(2000),
            n_batch: Some(100_000),
            t_max: 30_000,
            ..RunConfig::desk()
        }
    }

    pub fn from_raw(raw: RawConfig) -> Result<RunConfig> {
        let mut cfg = match raw.profile.unwrap_or(Profile::Desk) {
            Profile::Desk => RunConfig::desk(),
            Profile::Paper => RunConfig::paper(),
        };
        macro_rules! fill {
            ($($field:ident),+ $(,)?) => {
                $( if let Some(v) = raw.$field.clone() { cfg.$field = v; } )+
            };
        }
        fill!(
            seed, lambda_w, lambda_alpha, ssim_window, ssim_sigma, prune_interval, tau_alpha,
            t_delay, tau_split, t_max, position_lr_init, position_lr_final, log_scale_lr,
            rotation_lr, opacity_lr, sh_dc_lr, sh_rest_divisor, max_sh_degree,
            sh_promote_interval, checkpoint_interval, init_fallback_points, synth_k, synth_views,
            synth_resolution,
        );
        if raw.tau_remove.is_some() {
            cfg.tau_remove = raw.tau_remove;
        }
        if raw.n_batch.is_some() {
            cfg.n_batch = raw.n_batch;
        }
        if raw.data_dir.is_some() {
            cfg.data_dir = raw.data_dir;
        }
        if raw.out_dir.is_some() {
            cfg.out_dir = raw.out_dir;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_str_toml(text: &str) -> Result<RunConfig> {
        let raw = parse_raw(text)?;
        RunConfig::from_raw(raw)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::ConfigRead {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::from_str_toml(&text)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfigValue(msg));
        if !(0.0..=1.0).contains(&self.lambda_w) {
            return bad(format!("lambda_w = {} outside [0, 1]", self.lambda_w));
        }
        if !(self.lambda_alpha.is_finite() && self.lambda_alpha >= 0.0) {
            return bad(format!("lambda_alpha = {}", self.lambda_alpha));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return bad(format!("ssim_window = {} (need odd >= 3)", self.ssim_window));
        }
        if !(self.ssim_sigma.is_finite() && self.ssim_sigma > 0.0) {
            return bad(format!("ssim_sigma = {}", self.ssim_sigma));
        }
        if self.prune_interval == 0 {
            return bad("prune_interval = 0".into());
        }
        if !(self.tau_alpha > 0.0 && self.tau_alpha < 1.0) {
            return bad(format!("tau_alpha = {} outside (0, 1)", self.tau_alpha));
        }
        if self.n_batch == Some(0) {
            return bad("n_batch = 0".into());
        }
        if self.t_max == 0 {
            return bad("t_max = 0".into());
        }
        for (name, v) in [
            ("position_lr_init", self.position_lr_init),
            ("position_lr_final", self.position_lr_final),
            ("log_scale_lr", self.log_scale_lr),
            ("rotation_lr", self.rotation_lr),
            ("opacity_lr", self.opacity_lr),
            ("sh_dc_lr", self.sh_dc_lr),
            ("sh_rest_divisor", self.sh_rest_divisor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} (need > 0)"));
            }
        }
        if self.max_sh_degree > crate::sh::MAX_DEGREE {
            return bad(format!(
                "max_sh_degree = {} (storage supports up to {})",
                self.max_sh_degree,
                crate::sh::MAX_DEGREE
            ));
        }
        if self.synth_k == 0 || self.synth_views == 0 || self.synth_resolution < self.ssim_window {
            return bad(format!(
                "synth scene {}x{} views {} too small",
                self.synth_resolution, self.synth_resolution, self.synth_views
            ));
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval = 0".into());
        }
        Ok(())
    }

    /// Control threshold scaled from full-scene constants by the initial
    /// count: `max(20, round(2000 * n_init / 100 000))`.
    pub fn derived_tau_remove(n_init: usize) -> usize {
        ((2000.0 * n_init as f64 / 1e5).round() as usize).max(20)
    }

    /// `max(500, round(100 000 * n_init / 100 000))`.
    pub fn derived_n_batch(n_init: usize) -> usize {
        ((1e5 * n_init as f64 / 1e5).round() as usize).max(500)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_w: self.lambda_w,
            lambda_alpha: self.lambda_alpha,
            window: self.ssim_window,
            sigma: self.ssim_sigma,
            ..LossConfig::default()
        }
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            position_lr_init: self.position_lr_init,
            position_lr_final: self.position_lr_final,
            log_scale_lr: self.log_scale_lr,
            rotation_lr: self.rotation_lr,
            opacity_lr: self.opacity_lr,
            sh_dc_lr: self.sh_dc_lr,
            sh_rest_divisor: self.sh_rest_divisor,
            max_steps: self.t_max,
            ..OptimConfig::default()
        }
    }

    pub fn control_config(&self, n_init: usize) -> ControlConfig {
        ControlConfig {
            prune_interval: self.prune_interval,
            tau_alpha: self.tau_alpha,
            tau_remove: self
                .tau_remove
                .unwrap_or_else(|| RunConfig::derived_tau_remove(n_init)),
            n_batch: self
                .n_batch
                .unwrap_or_else(|| RunConfig::derived_n_batch(n_init)),
            t_delay: self.t_delay,
            tau_split: self.tau_split,
            t_max: self.t_max,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            k: self.synth_k,
            seed: self.seed,
            n_views: self.synth_views,
            resolution: self.synth_resolution,
            ..SynthConfig::default()
        }
    }

    /// Serialized resolved configuration, written next to run outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization")
    }
}

pub fn parse_raw(text: &str) -> Result<RawConfig> {
    toml::from_str(text).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("unknown field") {
            Error::UnknownConfigKey(msg)
        } else {
            Error::InvalidConfigValue(msg)
        }
    })
}
