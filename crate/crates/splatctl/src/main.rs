//! Command-line front end.
//!
//! Configuration precedence: profile defaults, then `--config` file values,
//! then individual flags. Exit codes: 0 success, 2 configuration error,
//! 3 data error, 4 training collapse.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use splatctl::error::{Error, Result};
use splatctl::harness::train::write_final_renders;
use splatctl::harness::{diagnostics, sweep, train, write_run_outputs};
use splatctl::io::config::{parse_raw, Profile, RawConfig, RunConfig};
use splatctl::io::synth::{synth_scene, write_scene};
use splatctl::io::{self, Dataset};
use splatctl::loss::LossConfig;
use splatctl::render::RasterConfig;

/// Default λ grid for `sweep` at desk scale. Calibrated so final counts are
/// well separated: desk runs at λ between ~3e-5 and ~1e-4 all settle near
/// the same count (the split-round cap binds before λ equilibrium does),
/// which would make adjacent grid points indistinguishable.
const DEFAULT_GRID: [f64; 5] = [5e-6, 1e-5, 2e-5, 2e-4, 3e-4];

#[derive(Parser)]
#[command(
    name = "splatctl",
    about = "Gaussian-splat trainer with opacity-driven structural control",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded synthetic scene on disk (images, manifest,
    /// init/ground-truth point files).
    Synth(SynthArgs),
    /// Train a model and write run artifacts (CSV logs, final PLY, renders).
    Train(TrainArgs),
    /// Evaluate a PLY model over a dataset's test split.
    Eval(EvalArgs),
    /// Run one training per λ over a grid; write sweep/monotonicity/curve CSVs.
    Sweep(SweepArgs),
    /// Reshape a finished run's checkpoint table into diagnostic CSVs.
    Diag(DiagArgs),
    /// Import a model PLY and re-export it (byte-identical round trip).
    ExportPly(ExportPlyArgs),
}

/// Flags mirror the run-configuration keys one-to-one; any value given here
/// overrides the config file, which overrides the profile defaults.
#[derive(Args, Clone, Debug, Default)]
struct Overrides {
    /// TOML config file with the same keys as these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base defaults: "desk" (small synthetic) or "paper" (full scale).
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory (transforms.json + frames). Without it, train/eval/
    /// sweep build the seeded synthetic scene in memory.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Where to write artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,

    #[arg(long)]
    lambda_w: Option<f64>,
    #[arg(long)]
    lambda_alpha: Option<f64>,
    #[arg(long)]
    ssim_window: Option<usize>,
    #[arg(long)]
    ssim_sigma: Option<f64>,

    #[arg(long)]
    prune_interval: Option<u64>,
    #[arg(long)]
    tau_alpha: Option<f64>,
    #[arg(long)]
    tau_remove: Option<usize>,
    #[arg(long)]
    n_batch: Option<usize>,
    #[arg(long)]
    t_delay: Option<u64>,
    #[arg(long)]
    tau_split: Option<u32>,
    #[arg(long)]
    t_max: Option<u64>,

    #[arg(long)]
    position_lr_init: Option<f64>,
    #[arg(long)]
    position_lr_final: Option<f64>,
    #[arg(long)]
    log_scale_lr: Option<f64>,
    #[arg(long)]
    rotation_lr: Option<f64>,
    #[arg(long)]
    opacity_lr: Option<f64>,
    #[arg(long)]
    sh_dc_lr: Option<f64>,
    #[arg(long)]
    sh_rest_divisor: Option<f64>,

    #[arg(long)]
    max_sh_degree: Option<usize>,
    #[arg(long)]
    sh_promote_interval: Option<u64>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    #[arg(long)]
    init_fallback_points: Option<usize>,

    #[arg(long)]
    synth_k: Option<usize>,
    #[arg(long)]
    synth_views: Option<usize>,
    #[arg(long)]
    synth_resolution: Option<usize>,
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    match s {
        "desk" => Ok(Profile::Desk),
        "paper" => Ok(Profile::Paper),
        _ => Err(format!("unknown profile '{s}' (expected desk or paper)")),
    }
}

impl Overrides {
    fn to_raw(&self) -> RawConfig {
        RawConfig {
            profile: self.profile,
            seed: self.seed,
            data_dir: self.data_dir.clone(),
            out_dir: self.out_dir.clone(),
            lambda_w: self.lambda_w,
            lambda_alpha: self.lambda_alpha,
            ssim_window: self.ssim_window,
            ssim_sigma: self.ssim_sigma,
            prune_interval: self.prune_interval,
            tau_alpha: self.tau_alpha,
            tau_remove: self.tau_remove,
            n_batch: self.n_batch,
            t_delay: self.t_delay,
            tau_split: self.tau_split,
            t_max: self.t_max,
            position_lr_init: self.position_lr_init,
            position_lr_final: self.position_lr_final,
            log_scale_lr: self.log_scale_lr,
            rotation_lr: self.rotation_lr,
            opacity_lr: self.opacity_lr,
            sh_dc_lr: self.sh_dc_lr,
            sh_rest_divisor: self.sh_rest_divisor,
            max_sh_degree: self.max_sh_degree,
            sh_promote_interval: self.sh_promote_interval,
            checkpoint_interval: self.checkpoint_interval,
            init_fallback_points: self.init_fallback_points,
            synth_k: self.synth_k,
            synth_views: self.synth_views,
            synth_resolution: self.synth_resolution,
        }
    }

    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::ConfigRead {
                    path: path.clone(),
                    source,
                })?;
                parse_raw(&text)?
            }
            None => RawConfig::default(),
        };
        RunConfig::from_raw(base.merged_with(&self.to_raw()))
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Model PLY to evaluate.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated λ values, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct DiagArgs {
    /// Run directory containing checkpoints.csv.
    #[arg(long)]
    run_dir: PathBuf,
    /// Defaults to <run_dir>/diag.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ExportPlyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

fn load_or_synth(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data_dir {
        Some(dir) => io::load_dataset(dir),
        None => Ok(synth_scene(&cfg.synth_config())?.1),
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let cfg = args.overrides.resolve()?;
    let dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("synth_scene"));
    let synth_cfg = cfg.synth_config();
    let (gt, dataset) = synth_scene(&synth_cfg)?;
    write_scene(&dir, &synth_cfg, &gt, &dataset)?;
    eprintln!(
        "wrote {} views ({} train / {} test) to {}",
        dataset.cameras.len(),
        dataset.train_indices.len(),
        dataset.test_indices.len(),
        dir.display()
    );
    Ok(0)
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let cfg = args.overrides.resolve()?;
    let dataset = load_or_synth(&cfg)?;
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("run"));
    let outcome = train(&cfg, &dataset)?;
    write_run_outputs(&out_dir, &cfg, &outcome)?;
    write_final_renders(&out_dir, &outcome, &dataset, &cfg)?;
    let m = &outcome.metrics;
    println!("n_gaussians,collapsed,wall_s,train_psnr,train_ssim,test_psnr,test_ssim");
    println!(
        "{},{},{},{},{},{},{}",
        outcome.set.len(),
        outcome.collapsed,
        outcome.wall_s,
        m.train_psnr,
        m.train_ssim,
        m.test_psnr,
        m.test_ssim
    );
    eprintln!("run artifacts in {}", out_dir.display());
    if outcome.collapsed {
        eprintln!("{}", Error::Collapsed);
        return Ok(Error::Collapsed.exit_code());
    }
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let cfg = args.overrides.resolve()?;
    let dataset = load_or_synth(&cfg)?;
    let set = io::ply::import_ply(&args.model)?;
    let loss_cfg = LossConfig {
        lambda_w: cfg.lambda_w,
        window: cfg.ssim_window,
        sigma: cfg.ssim_sigma,
        ..LossConfig::default()
    };
    let raster = RasterConfig::default();
    let (views, mean_psnr, mean_ssim) = splatctl::harness::eval_views(
        &set,
        &dataset,
        &dataset.test_indices,
        &loss_cfg,
        &raster,
    )?;
    println!("scope,index,psnr,ssim,n_gaussians");
    for v in &views {
        println!("test_view,{},{},{},", v.index, v.psnr, v.ssim);
    }
    println!("test_mean,,{},{},{}", mean_psnr, mean_ssim, set.len());
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let cfg = args.overrides.resolve()?;
    let grid: Vec<f64> = args.grid.clone().unwrap_or_else(|| DEFAULT_GRID.to_vec());
    let dataset = load_or_synth(&cfg)?;
    let out_dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("sweep_out"));
    let (records, _) = sweep(&cfg, &grid, &dataset, Some(&out_dir))?;
    print!("{}", splatctl::harness::sweep::sweep_csv(&records));
    eprintln!("sweep artifacts in {}", out_dir.display());
    Ok(0)
}

fn cmd_diag(args: &DiagArgs) -> Result<i32> {
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| args.run_dir.join("diag"));
    diagnostics(&args.run_dir, &out_dir)?;
    eprintln!("diagnostics in {}", out_dir.display());
    Ok(0)
}

fn cmd_export_ply(args: &ExportPlyArgs) -> Result<i32> {
    let set = io::ply::import_ply(&args.input)?;
    io::ply::export_ply(&set, &args.output)?;
    eprintln!(
        "re-exported {} Gaussians to {}",
        set.len(),
        args.output.display()
    );
    Ok(0)
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Diag(args) => cmd_diag(args),
        Command::ExportPly(args) => cmd_export_ply(args),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
