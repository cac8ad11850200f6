//! λ sweep: independent runs over a grid of regularization weights, plus the
//! count-monotonicity report and the count–quality curve annotation.

use std::path::Path;

use super::train::{train, write_run_outputs, TrainOutcome};
use crate::error::{io_err, Error, Result};
use crate::io::config::RunConfig;
use crate::io::Dataset;

#[derive(Clone, Copy, Debug)]
pub struct SweepRecord {
    pub lambda_alpha: f64,
    pub final_count: usize,
    pub test_psnr: f64,
    pub test_ssim: f64,
    pub wall_s: f64,
    pub collapsed: bool,
}

/// Train once per grid point with identical seed and data; only λ varies.
/// Runs are independent; a failed run is reported and skipped.
pub fn sweep(
    cfg: &RunConfig,
    grid: &[f64],
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<(Vec<SweepRecord>, Vec<Option<TrainOutcome>>)> {
    if grid.is_empty() {
        return Err(Error::InvalidConfigValue("empty lambda grid".into()));
    }
    for w in grid.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidConfigValue(format!(
                "lambda grid must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut records = Vec::with_capacity(grid.len());
    let mut outcomes = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut run_cfg = cfg.clone();
        run_cfg.lambda_alpha = lambda;
        match train(&run_cfg, dataset) {
            Ok(outcome) => {
                if let Some(dir) = out_dir {
                    let run_dir = dir.join(format!("run_lambda_{lambda:e}"));
                    write_run_outputs(&run_dir, &run_cfg, &outcome)?;
                }
                records.push(SweepRecord {
                    lambda_alpha: lambda,
                    final_count: outcome.set.len(),
                    test_psnr: outcome.metrics.test_psnr,
                    test_ssim: outcome.metrics.test_ssim,
                    wall_s: outcome.wall_s,
                    collapsed: outcome.collapsed,
                });
                outcomes.push(Some(outcome));
            }
            Err(e) => {
                eprintln!("sweep: run at lambda_alpha={lambda:e} failed: {e}");
                records.push(SweepRecord {
                    lambda_alpha: lambda,
                    final_count: 0,
                    test_psnr: f64::NAN,
                    test_ssim: f64::NAN,
                    wall_s: f64::NAN,
                    collapsed: false,
                });
                outcomes.push(None);
            }
        }
    }
    if let Some(dir) = out_dir {
        write_sweep_outputs(dir, &records)?;
    }
    Ok((records, outcomes))
}

pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut csv = String::from("lambda_alpha,final_count,test_psnr,test_ssim,wall_s\n");
    for r in records {
        csv.push_str(&format!(
            "{:e},{},{},{},{}\n",
            r.lambda_alpha, r.final_count, r.test_psnr, r.test_ssim, r.wall_s
        ));
    }
    csv
}

pub fn monotonicity_csv(records: &[SweepRecord]) -> String {
    let mut csv = String::from("lambda_lo,lambda_hi,count_lo,count_hi,nonincreasing\n");
    for w in records.windows(2) {
        csv.push_str(&format!(
            "{:e},{:e},{},{},{}\n",
            w[0].lambda_alpha,
            w[1].lambda_alpha,
            w[0].final_count,
            w[1].final_count,
            w[1].final_count <= w[0].final_count
        ));
    }
    csv
}

/// Phase label for a segment slope in dB per count doubling. The bands are a
/// heuristic annotation of the count–quality curve: D degrading, C
/// saturated, B efficient, A severely underfit.
pub fn phase_label(slope_db_per_doubling: f64) -> &'static str {
    if slope_db_per_doubling < 0.0 {
        "D"
    } else if slope_db_per_doubling < 1.0 {
        "C"
    } else if slope_db_per_doubling <= 4.0 {
        "B"
    } else {
        "A"
    }
}

/// Count–quality pairs ordered by count, each with the slope of the segment
/// toward the next-larger count and its heuristic phase label.
pub fn curve_csv(records: &[SweepRecord]) -> String {
    let mut pts: Vec<&SweepRecord> = records
        .iter()
        .filter(|r| r.test_psnr.is_finite() && r.final_count > 0)
        .collect();
    pts.sort_by(|a, b| a.final_count.cmp(&b.final_count));
    let mut csv = String::from("final_count,test_psnr,slope_db_per_doubling,phase_heuristic\n");
    for (i, p) in pts.iter().enumerate() {
        let (slope, label) = if i + 1 < pts.len() {
            let n0 = p.final_count as f64;
            let n1 = pts[i + 1].final_count as f64;
            let dp = pts[i + 1].test_psnr - p.test_psnr;
            if n1 > n0 {
                let s = dp / (n1 / n0).log2();
                (s, phase_label(s))
            } else {
                (f64::NAN, "C")
            }
        } else if i > 0 {
            // Last point inherits the previous segment's label.
            let n0 = pts[i - 1].final_count as f64;
            let n1 = p.final_count as f64;
            let dp = p.test_psnr - pts[i - 1].test_psnr;
            if n1 > n0 {
                let s = dp / (n1 / n0).log2();
                (f64::NAN, phase_label(s))
            } else {
                (f64::NAN, "C")
            }
        } else {
            (f64::NAN, "C")
        };
        csv.push_str(&format!(
            "{},{},{},{}\n",
            p.final_count, p.test_psnr, slope, label
        ));
    }
    csv
}

pub fn write_sweep_outputs(dir: &Path, records: &[SweepRecord]) -> Result<()> {
    std::fs::write(dir.join("sweep.csv"), sweep_csv(records))
        .map_err(io_err(dir.join("sweep.csv")))?;
    std::fs::write(dir.join("monotonicity.csv"), monotonicity_csv(records))
        .map_err(io_err(dir.join("monotonicity.csv")))?;
    std::fs::write(dir.join("curve.csv"), curve_csv(records))
        .map_err(io_err(dir.join("curve.csv")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(lambda: f64, count: usize, psnr: f64) -> SweepRecord {
        SweepRecord {
            lambda_alpha: lambda,
            final_count: count,
            test_psnr: psnr,
            test_ssim: 0.9,
            wall_s: 1.0,
            collapsed: false,
        }
    }

    #[test]
    fn grid_must_be_increasing_and_nonempty() {
        let cfg = RunConfig::desk();
        let ds = Dataset {
            cameras: vec![],
            images: vec![],
            train_indices: vec![],
            test_indices: vec![],
            init_points: vec![],
            init_colors: vec![],
        };
        assert!(matches!(
            sweep(&cfg, &[], &ds, None),
            Err(Error::InvalidConfigValue(_))
        ));
        assert!(matches!(
            sweep(&cfg, &[2e-5, 1e-5], &ds, None),
            Err(Error::InvalidConfigValue(_))
        ));
    }

    #[test]
    fn csv_layouts_are_stable() {
        let records = vec![rec(1e-5, 800, 31.0), rec(1e-4, 200, 28.0)];
        let csv = sweep_csv(&records);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "lambda_alpha,final_count,test_psnr,test_ssim,wall_s"
        );
        assert!(lines.next().unwrap().starts_with("1e-5,800,31,"));
        let mono = monotonicity_csv(&records);
        assert!(mono.lines().nth(1).unwrap().ends_with(",true"));
    }

    #[test]
    fn curve_orders_by_count_and_labels_phases() {
        // 100 -> 200: +6 dB per doubling (A); 200 -> 400: +2 (B);
        // 400 -> 800: +0.5 (C); 800 -> 1600: -1 (D).
        let records = vec![
            rec(5e-4, 100, 20.0),
            rec(1e-4, 200, 26.0),
            rec(5e-5, 400, 28.0),
            rec(2e-5, 800, 28.5),
            rec(1e-5, 1600, 27.5),
        ];
        let csv = curve_csv(&records);
        let labels: Vec<&str> = csv
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap())
            .collect();
        assert_eq!(labels, vec!["A", "B", "C", "D", "D"]);
    }
}
