//! Synthetic scene with a known ground truth.
//!
//! Generates a random Gaussian set inside the unit ball, a ring of cameras on
//! a sphere looking at the origin, and target images rendered by this crate's
//! own rasterizer — so a perfect fit is achievable and the ground truth set
//! scores the capped PSNR on its own data. Initialization points are the
//! ground-truth positions under Gaussian noise, keeping recovery nontrivial.

use std::path::Path;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{split_indices, Dataset, FrameEntry, TransformsFile};
use crate::core::{inverse_sigmoid, Camera, GaussianSet};
use crate::error::{io_err, Result};
use crate::render::{rasterize_forward, RasterConfig};
use crate::sh::SH_C0;

#[derive(Clone, Copy, Debug)]
pub struct SynthConfig {
    pub k: usize,
    pub seed: u64,
    pub n_views: usize,
    pub resolution: usize,
    /// Horizontal field of view in radians.
    pub camera_angle_x: f64,
    /// Camera ring radius.
    pub radius: f64,
    /// Standard deviation of the init-point perturbation.
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            k: 64,
            seed: 42,
            n_views: 24,
            resolution: 128,
            camera_angle_x: 0.8,
            radius: 3.0,
            noise_sigma: 0.05,
        }
    }
}

/// Standard normal via Box-Muller on the given stream.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn unit_ball_point<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let p = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if p.norm() <= 1.0 {
            return p;
        }
    }
}

fn random_unit_quaternion<R: Rng>(rng: &mut R) -> Vector4<f64> {
    loop {
        let q = Vector4::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = q.norm();
        if (0.1..=1.0).contains(&n) {
            return q / n;
        }
    }
}

/// Evenly spread directions on the sphere (Fibonacci lattice).
fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let theta = 2.0 * std::f64::consts::PI * (i as f64) / golden;
            Vector3::new(r * theta.cos(), r * theta.sin(), z)
        })
        .collect()
}

pub fn cameras_on_sphere(cfg: &SynthConfig) -> Result<Vec<Camera>> {
    let res = cfg.resolution;
    let f = 0.5 * res as f64 / (0.5 * cfg.camera_angle_x).tan();
    let c = res as f64 / 2.0;
    fibonacci_sphere(cfg.n_views)
        .into_iter()
        .map(|dir| {
            Camera::look_at(
                dir * cfg.radius,
                Vector3::zeros(),
                Vector3::z(),
                res,
                res,
                f,
                f,
                c,
                c,
            )
        })
        .collect()
}

/// Ground-truth set plus its rendered dataset, fully determined by the seed.
pub fn synth_scene(cfg: &SynthConfig) -> Result<(GaussianSet, Dataset)> {
    assert!(cfg.k >= 1, "need at least one Gaussian");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gt = GaussianSet::new(0);
    let (lo, hi) = (0.02f64.ln(), 0.15f64.ln());
    for _ in 0..cfg.k {
        let position = unit_ball_point(&mut rng);
        let log_scale = Vector3::new(
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
        );
        let rotation = random_unit_quaternion(&mut rng);
        let opacity: f64 = rng.gen_range(0.5..0.95);
        let rgb = [
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ];
        let sh: Vec<f64> = rgb.iter().map(|c| (c - 0.5) / SH_C0).collect();
        gt.push(position, log_scale, rotation, inverse_sigmoid(opacity), &sh);
    }
    let cameras = cameras_on_sphere(cfg)?;
    let raster = RasterConfig::default();
    let mut images = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let buffers = rasterize_forward(&gt, cam, &raster)?;
        images.push(buffers.image);
    }
    let mut init_points = Vec::with_capacity(cfg.k);
    let mut init_colors = Vec::with_capacity(cfg.k);
    for i in 0..cfg.k {
        let noise = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
        init_points.push(gt.positions[i] + noise * cfg.noise_sigma);
        let sh = gt.sh_of(i);
        init_colors.push([
            sh[0] * SH_C0 + 0.5,
            sh[1] * SH_C0 + 0.5,
            sh[2] * SH_C0 + 0.5,
        ]);
    }
    let (train_indices, test_indices) = split_indices(cameras.len());
    Ok((
        gt,
        Dataset {
            cameras,
            images,
            train_indices,
            test_indices,
            init_points,
            init_colors,
        },
    ))
}

/// Write a synthetic scene as an on-disk dataset: manifest, 8-bit PNGs with
/// exact `.f64` sidecars, init points, and the ground-truth model.
pub fn write_scene(dir: &Path, cfg: &SynthConfig, gt: &GaussianSet, dataset: &Dataset) -> Result<()> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
    let mut frames = Vec::with_capacity(dataset.cameras.len());
    for (i, cam) in dataset.cameras.iter().enumerate() {
        let stem = format!("images/view_{i:03}");
        let png = dir.join(format!("{stem}.png"));
        super::write_png(&png, &dataset.images[i])?;
        super::write_f64_dump(&png.with_extension("f64"), &dataset.images[i])?;
        // Camera-to-world in OpenGL axes: columns right, up, backward.
        let r_c2w = cam.rotation.transpose();
        let center = cam.center();
        let mut m = [[0.0f64; 4]; 4];
        for row in 0..3 {
            m[row][0] = r_c2w[(row, 0)];
            m[row][1] = -r_c2w[(row, 1)];
            m[row][2] = -r_c2w[(row, 2)];
            m[row][3] = center[row];
        }
        m[3][3] = 1.0;
        frames.push(FrameEntry {
            file_path: format!("./{stem}"),
            transform_matrix: m,
        });
    }
    let manifest = TransformsFile {
        camera_angle_x: cfg.camera_angle_x,
        frames,
    };
    let manifest_path = dir.join("transforms.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    std::fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    super::ply::write_points_ply(
        &dir.join("init_points.ply"),
        &dataset.init_points,
        &dataset.init_colors,
    )?;
    super::ply::export_ply(gt, &dir.join("ground_truth.ply"))?;
    Ok(())
}
