//! Post-hoc diagnostics over a finished run directory: reshape the checkpoint
//! table into an opacity-histogram long format and a size-evolution series.

use std::path::Path;

use super::HISTOGRAM_BINS;
use crate::error::{io_err, Error, Result};

struct CheckpointRow {
    iteration: u64,
    n_gaussians: usize,
    mean_scale: f64,
    histogram: Vec<u64>,
}

fn parse_checkpoints(path: &Path) -> Result<Vec<CheckpointRow>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |reason: String| Error::MalformedManifest {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| -> Result<usize> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| malformed(format!("missing column {name}")))
    };
    let it_col = col("iteration")?;
    let n_col = col("n_gaussians")?;
    let scale_col = col("mean_scale")?;
    let hist0_col = col("hist_0")?;
    if cols.len() < hist0_col + HISTOGRAM_BINS {
        return Err(malformed(format!(
            "expected {HISTOGRAM_BINS} histogram columns"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(malformed(format!(
                "line {} has {} fields, header has {}",
                lineno + 2,
                fields.len(),
                cols.len()
            )));
        }
        let bad = |what: &str| malformed(format!("line {}: bad {what}", lineno + 2));
        let iteration: u64 = fields[it_col].parse().map_err(|_| bad("iteration"))?;
        let n_gaussians: usize = fields[n_col].parse().map_err(|_| bad("n_gaussians"))?;
        let mean_scale: f64 = fields[scale_col].parse().map_err(|_| bad("mean_scale"))?;
        let mut histogram = Vec::with_capacity(HISTOGRAM_BINS);
        for b in 0..HISTOGRAM_BINS {
            histogram.push(fields[hist0_col + b].parse().map_err(|_| bad("histogram"))?);
        }
        rows.push(CheckpointRow {
            iteration,
            n_gaussians,
            mean_scale,
            histogram,
        });
    }
    Ok(rows)
}

/// Read `<run_dir>/checkpoints.csv` and write `opacity_histogram.csv` and
/// `size_evolution.csv` into `out_dir`.
pub fn diagnostics(run_dir: &Path, out_dir: &Path) -> Result<()> {
    let rows = parse_checkpoints(&run_dir.join("checkpoints.csv"))?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let bin_width = 1.0 / HISTOGRAM_BINS as f64;
    let mut hist = String::from("iteration,bin,bin_lo,bin_hi,count\n");
    for row in &rows {
        for (b, &count) in row.histogram.iter().enumerate() {
            hist.push_str(&format!(
                "{},{},{},{},{}\n",
                row.iteration,
                b,
                b as f64 * bin_width,
                (b + 1) as f64 * bin_width,
                count
            ));
        }
    }
    let hist_path = out_dir.join("opacity_histogram.csv");
    std::fs::write(&hist_path, hist).map_err(io_err(&hist_path))?;

    let mut size = String::from("iteration,n_gaussians,mean_scale\n");
    for row in &rows {
        size.push_str(&format!(
            "{},{},{}\n",
            row.iteration, row.n_gaussians, row.mean_scale
        ));
    }
    let size_path = out_dir.join("size_evolution.csv");
    std::fs::write(&size_path, size).map_err(io_err(&size_path))?;
    Ok(())
}
