//! Dataset loading, Gaussian initialization, and image files.
//!
//! Datasets follow the transforms-manifest layout: a `transforms.json` with a
//! shared horizontal field of view and per-frame camera-to-world matrices in
//! OpenGL axes (x right, y up, z backward), next to 8-bit PNG frames. When a
//! frame has a raw `.f64` sidecar (written by the synthetic-scene generator),
//! its full-precision pixels replace the quantized PNG so metric audits stay
//! bit-exact. Optional `init_points.ply` supplies initialization points.

pub mod config;
pub mod ply;
pub mod synth;

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{inverse_sigmoid, Camera, GaussianSet, MIN_SCALE};
use crate::error::{io_err, Error, Result};
use crate::image::Image;
use crate::sh::SH_C0;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub init_points: Vec<Vector3<f64>>,
    pub init_colors: Vec<[f64; 3]>,
}

/// Every eighth frame is held out for testing.
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    let test: Vec<usize> = (0..n).filter(|i| i % 8 == 0).collect();
    let train: Vec<usize> = (0..n).filter(|i| i % 8 != 0).collect();
    (train, test)
}

#[derive(Serialize, Deserialize)]
pub(crate) struct TransformsFile {
    pub camera_angle_x: f64,
    pub frames: Vec<FrameEntry>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct FrameEntry {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
}

fn frame_image_path(dir: &Path, file_path: &str) -> PathBuf {
    let trimmed = file_path.strip_prefix("./").unwrap_or(file_path);
    let mut p = dir.join(trimmed);
    if p.extension().is_none() {
        p.set_extension("png");
    }
    p
}

/// World-to-camera pose from a camera-to-world matrix in OpenGL axes.
/// The camera frame here is x-right, y-down, z-forward, so the y and z
/// columns flip sign before inverting.
fn pose_from_c2w(index: usize, m: &[[f64; 4]; 4]) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let mat = Matrix4::from_fn(|r, c| m[r][c]);
    let mut r_c2w = mat.fixed_view::<3, 3>(0, 0).into_owned();
    let center = Vector3::new(mat[(0, 3)], mat[(1, 3)], mat[(2, 3)]);
    for row in 0..3 {
        r_c2w[(row, 1)] = -r_c2w[(row, 1)];
        r_c2w[(row, 2)] = -r_c2w[(row, 2)];
    }
    if r_c2w.determinant().abs() < 1e-8 {
        return Err(Error::NonInvertiblePose(index));
    }
    let r_w2c = r_c2w.transpose();
    let t = -(r_w2c * center);
    Ok((r_w2c, t))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("transforms.json");
    if !manifest_path.exists() {
        return Err(Error::MissingManifest(manifest_path));
    }
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: TransformsFile =
        serde_json::from_str(&text).map_err(|e| Error::MalformedManifest {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
    if manifest.frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(manifest.camera_angle_x.is_finite() && manifest.camera_angle_x > 0.0) {
        return Err(Error::MalformedManifest {
            path: manifest_path,
            reason: format!("camera_angle_x = {}", manifest.camera_angle_x),
        });
    }
    let mut cameras = Vec::with_capacity(manifest.frames.len());
    let mut images = Vec::with_capacity(manifest.frames.len());
    for (i, frame) in manifest.frames.iter().enumerate() {
        let img_path = frame_image_path(dir, &frame.file_path);
        let mut img = read_png(&img_path)?;
        let sidecar = img_path.with_extension("f64");
        if sidecar.exists() {
            img = read_f64_dump(&sidecar, img.width, img.height)?;
        }
        let (rotation, translation) = pose_from_c2w(i, &frame.transform_matrix)?;
        let w = img.width as f64;
        let fx = 0.5 * w / (0.5 * manifest.camera_angle_x).tan();
        let cam = Camera::new(
            img.width,
            img.height,
            fx,
            fx,
            w / 2.0,
            img.height as f64 / 2.0,
            rotation,
            translation,
        )?;
        cameras.push(cam);
        images.push(img);
    }
    let (train_indices, test_indices) = split_indices(cameras.len());
    let (init_points, init_colors) = {
        let points_path = dir.join("init_points.ply");
        if points_path.exists() {
            ply::read_points_ply(&points_path)?
        } else {
            (Vec::new(), Vec::new())
        }
    };
    Ok(Dataset {
        cameras,
        images,
        train_indices,
        test_indices,
        init_points,
        init_colors,
    })
}

/// Radius of the camera-center bounding sphere times 1.1; positions scale
/// their learning rate by this. Falls back to 1 for degenerate rigs.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let mut centroid = Vector3::zeros();
    for c in cameras {
        centroid += c.center();
    }
    centroid /= cameras.len() as f64;
    let radius = cameras
        .iter()
        .map(|c| (c.center() - centroid).norm())
        .fold(0.0, f64::max);
    if radius > 0.0 {
        1.1 * radius
    } else {
        1.0
    }
}

/// One Gaussian per point: isotropic scale from the mean distance to the
/// three nearest neighbors (floored at [`MIN_SCALE`]), identity rotation,
/// activated opacity 0.1, DC color from RGB, higher bands zero. Without
/// points, positions are sampled uniformly in `fallback_bbox`, mid-gray.
pub fn init_gaussians(
    points: &[Vector3<f64>],
    colors: &[[f64; 3]],
    n_random_fallback: usize,
    seed: u64,
    max_sh_degree: usize,
    fallback_bbox: (Vector3<f64>, Vector3<f64>),
) -> GaussianSet {
    let mut set = GaussianSet::new(max_sh_degree);
    let basis = set.basis_size();
    let logit = inverse_sigmoid(0.1);
    let push = |set: &mut GaussianSet, p: Vector3<f64>, rgb: [f64; 3], scale: f64| {
        let mut sh = vec![0.0; 3 * basis];
        for ch in 0..3 {
            sh[ch * basis] = (rgb[ch] - 0.5) / SH_C0;
        }
        set.push(
            p,
            Vector3::repeat(scale.max(MIN_SCALE).ln()),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            logit,
            &sh,
        );
    };
    if points.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = fallback_bbox;
        for _ in 0..n_random_fallback {
            let p = Vector3::new(
                rng.gen_range(lo.x..=hi.x),
                rng.gen_range(lo.y..=hi.y),
                rng.gen_range(lo.z..=hi.z),
            );
            push(&mut set, p, [0.5; 3], 0.1);
        }
        return set;
    }
    for (i, &p) in points.iter().enumerate() {
        let mut dists: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| (p - q).norm())
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = dists.len().min(3);
        let mean_d = if k == 0 {
            0.1
        } else {
            dists[..k].iter().sum::<f64>() / k as f64
        };
        let rgb = colors.get(i).copied().unwrap_or([0.5; 3]);
        push(&mut set, p, rgb, mean_d);
    }
    set
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.pixel(x, y);
            let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, image::Rgb([q(p[0]), q(p[1]), q(p[2])]));
        }
    }
    buf.save(path).map_err(|e| Error::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// 8-bit PNG scaled to [0, 1]; alpha, when present, is composited over
/// black.
pub fn read_png(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| Error::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgba = decoded.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut img = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = rgba.get_pixel(x as u32, y as u32);
            let a = p[3] as f64 / 255.0;
            img.set_pixel(
                x,
                y,
                [
                    p[0] as f64 / 255.0 * a,
                    p[1] as f64 / 255.0 * a,
                    p[2] as f64 / 255.0 * a,
                ],
            );
        }
    }
    Ok(img)
}

/// Raw pixel dump: `width * height * 3` little-endian f64, row-major RGB.
pub fn write_f64_dump(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.data.len() * 8);
    for v in &img.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_f64_dump(path: &Path, width: usize, height: usize) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let want = width * height * 3 * 8;
    if bytes.len() != want {
        return Err(Error::UnreadableImage {
            path: path.to_path_buf(),
            reason: format!("raw dump is {} bytes, expected {want}", bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Image::from_data(width, height, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use tempfile::tempdir;

    #[test]
    fn split_is_every_eighth() {
        let (train, test) = split_indices(9);
        assert_eq!(test, vec![0, 8]);
        assert_eq!(train, vec![1, 2, 3, 4, 5, 6, 7]);
        let (train, test) = split_indices(24);
        assert_eq!(test, vec![0, 8, 16]);
        assert_eq!(train.len(), 21);
    }

    #[test]
    fn focal_from_field_of_view() {
        // 90-degree horizontal FOV at width 800 gives fx = 400.
        let dir = tempdir().unwrap();
        let img = Image::zeros(800, 4);
        write_png(&dir.path().join("v.png"), &img).unwrap();
        let manifest = serde_json::json!({
            "camera_angle_x": std::f64::consts::FRAC_PI_2,
            "frames": [
                {"file_path": "./v", "transform_matrix": [
                    [1.0, 0.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0, 5.0],
                    [0.0, 0.0, 0.0, 1.0]
                ]}
            ]
        });
        std::fs::write(
            dir.path().join("transforms.json"),
            serde_json::to_string(&manifest).unwrap(),
        )
        .unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_relative_eq!(ds.cameras[0].fx, 400.0, epsilon = 1e-9);
        assert_relative_eq!(ds.cameras[0].cx, 400.0, epsilon = 1e-12);
        // Identity GL pose at z=5: the camera looks down world -z from +5.
        let p = ds.cameras[0].to_camera(Vector3::new(0.0, 0.0, 0.0));
        assert_relative_eq!(p[2], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_manifest_and_empty_frames_are_distinct() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::MissingManifest(_))
        ));
        std::fs::write(
            dir.path().join("transforms.json"),
            r#"{"camera_angle_x": 0.8, "frames": []}"#,
        )
        .unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::EmptyDataset)));
        std::fs::write(dir.path().join("transforms.json"), "not json").unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::MalformedManifest { .. })
        ));
    }

    #[test]
    fn singular_pose_is_reported() {
        let dir = tempdir().unwrap();
        write_png(&dir.path().join("v.png"), &Image::zeros(4, 4)).unwrap();
        let manifest = serde_json::json!({
            "camera_angle_x": 0.8,
            "frames": [
                {"file_path": "./v", "transform_matrix": [
                    [0.0, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 5.0],
                    [0.0, 0.0, 0.0, 1.0]
                ]}
            ]
        });
        std::fs::write(
            dir.path().join("transforms.json"),
            serde_json::to_string(&manifest).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::NonInvertiblePose(0))
        ));
    }

    #[test]
    fn png_round_trip_and_f64_sidecar() {
        let dir = tempdir().unwrap();
        let mut img = Image::zeros(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).fract();
        }
        let png = dir.path().join("x.png");
        write_png(&png, &img).unwrap();
        let back = read_png(&png).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let dump = dir.path().join("x.f64");
        write_f64_dump(&dump, &img).unwrap();
        let exact = read_f64_dump(&dump, 5, 3).unwrap();
        assert_eq!(exact.data, img.data);
        assert!(read_f64_dump(&dump, 5, 4).is_err());
    }

    #[test]
    fn init_from_points_uses_neighbor_distances() {
        let points = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 4.0),
        ];
        let colors = vec![[0.5, 0.5, 0.5], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.25, 0.5, 0.75]];
        let set = init_gaussians(&points, &colors, 0, 1, 2, (Vector3::zeros(), Vector3::zeros()));
        assert_eq!(set.len(), 4);
        assert_eq!(set.max_sh_degree, 2);
        // Point 0: neighbors at distances 1, 2, 4 -> mean 7/3.
        assert_relative_eq!(set.activated_scale(0).x, 7.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(set.activated_opacity(0), 0.1, epsilon = 1e-12);
        // Mid-gray maps to a zero DC coefficient.
        assert_eq!(set.sh_of(0)[0], 0.0);
        let basis = set.basis_size();
        assert_relative_eq!(
            set.sh_of(1)[0] * SH_C0 + 0.5,
            1.0,
            epsilon = 1e-12
        );
        // Higher bands start at zero.
        for b in 1..basis {
            assert_eq!(set.sh_of(1)[b], 0.0);
        }
    }

    #[test]
    fn init_fallback_fills_the_bbox() {
        let bbox = (Vector3::new(-1.0, 0.0, 2.0), Vector3::new(1.0, 1.0, 3.0));
        let set = init_gaussians(&[], &[], 50, 9, 0, bbox);
        assert_eq!(set.len(), 50);
        for p in &set.positions {
            assert!(p.x >= -1.0 && p.x <= 1.0);
            assert!(p.y >= 0.0 && p.y <= 1.0);
            assert!(p.z >= 2.0 && p.z <= 3.0);
        }
        let again = init_gaussians(&[], &[], 50, 9, 0, bbox);
        assert_eq!(again.positions, set.positions);
    }

    #[test]
    fn extent_is_scaled_bounding_radius() {
        let mk = |eye: Vector3<f64>| {
            Camera::look_at(eye, Vector3::zeros(), Vector3::z(), 8, 8, 10.0, 10.0, 4.0, 4.0)
                .unwrap()
        };
        let cams = vec![
            mk(Vector3::new(3.0, 0.0, 1.0)),
            mk(Vector3::new(-3.0, 0.0, 1.0)),
        ];
        assert_relative_eq!(scene_extent(&cams), 1.1 * 3.0, epsilon = 1e-9);
        assert_eq!(scene_extent(&[]), 1.0);
    }
}
