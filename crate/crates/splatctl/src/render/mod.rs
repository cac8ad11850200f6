//! CPU rasterizer: EWA projection of 3D Gaussians to screen-space 2D
//! Gaussians and front-to-back alpha compositing over a black background.
//!
//! Compositing follows a single global depth order (ties broken by index),
//! so traversal is splat-major: each projected splat walks the pixels of its
//! conservative bounding box in that order, which per pixel is exactly
//! front-to-back. A contribution is skipped when its alpha falls below the
//! floor, and a pixel closes when the next contribution would push its
//! transmittance below the cutoff (that contribution is not composited).
//!
//! The backward pass replays the identical traversal, so forward skip rules
//! and gradients agree bit for bit.

mod backward;

pub use backward::{rasterize_backward, Gradients};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use crate::core::{Camera, GaussianSet};
use crate::error::Result;
use crate::image::Image;
use crate::sh;

/// Numeric conventions of the rasterizer. Defaults are load-bearing; the
/// tests pin them.
#[derive(Clone, Copy, Debug)]
pub struct RasterConfig {
    /// Added to both diagonal entries of the 2D covariance (pixel^2).
    pub dilation: f64,
    /// Per-contribution alpha ceiling.
    pub alpha_cap: f64,
    /// Contributions below this alpha are skipped.
    pub alpha_floor: f64,
    /// A pixel closes instead of compositing a contribution that would push
    /// transmittance below this.
    pub transmittance_cutoff: f64,
    /// Splats at camera z at or below this are culled.
    pub near: f64,
    /// 2D covariance determinant (before dilation) at or below this marks the
    /// splat invisible.
    pub det_floor: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            dilation: 0.3,
            alpha_cap: 0.99,
            alpha_floor: 1.0 / 255.0,
            transmittance_cutoff: 1e-4,
            near: 0.01,
            det_floor: 1e-12,
        }
    }
}

/// Screen-space projection of one Gaussian.
#[derive(Clone, Copy, Debug)]
pub struct Projected2D {
    pub visible: bool,
    pub mean2d: Vector2<f64>,
    /// Dilated 2D covariance.
    pub cov2d: Matrix2<f64>,
    /// Camera-space z, the compositing sort key.
    pub depth: f64,
    /// Clamped SH color at the view direction.
    pub color: [f64; 3],
}

/// Everything the backward chain needs about one visible projection.
#[derive(Clone, Debug)]
pub(crate) struct ProjectionFull {
    pub mean_cam: Vector3<f64>,
    pub sigma_cam: Matrix3<f64>,
    pub j: Matrix2x3<f64>,
    /// Dilated covariance entries (xx, xy, yy).
    pub cov: (f64, f64, f64),
    /// Inverse of the dilated covariance, same layout.
    pub conic: (f64, f64, f64),
    pub mean2d: Vector2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    /// Color before the clamp at zero; the clamp gates the color gradient.
    pub color_pre: [f64; 3],
    pub view_dir: Vector3<f64>,
    pub view_norm: f64,
    pub opacity: f64,
    pub scale: Vector3<f64>,
    pub rotation_unit: Vector4<f64>,
}

/// Per-splat state for the pixel loop.
#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    pub index: usize,
    pub mean: Vector2<f64>,
    pub conic: (f64, f64, f64),
    pub color: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
    /// Mahalanobis^2 beyond which alpha is guaranteed below the floor.
    pub q_cut: f64,
    /// Pixel bounds, `x0..x1` by `y0..y1`.
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

/// Forward products retained for the backward pass.
pub struct RenderBuffers {
    pub image: Image,
    /// Final per-pixel transmittance, row-major.
    pub final_transmittance: Vec<f64>,
    pub(crate) prepared: Vec<Prepared>,
    /// Set size at forward time; backward validates against it.
    pub n_gaussians: usize,
}

/// Projects Gaussian `i`; `None` when culled (near plane, degenerate 2D
/// covariance, bounding box off screen, opacity below the alpha floor).
pub(crate) fn project_full(
    set: &GaussianSet,
    i: usize,
    cam: &Camera,
    cfg: &RasterConfig,
) -> Result<Option<ProjectionFull>> {
    let act = set.activated(i)?;
    let mean_cam = cam.to_camera(act.position);
    let z = mean_cam[2];
    if z <= cfg.near {
        return Ok(None);
    }
    let sigma_world = crate::core::build_covariance(act.scale, act.rotation);
    let rw = cam.rotation;
    let sigma_cam = rw * sigma_world * rw.transpose();
    let (x, y) = (mean_cam[0], mean_cam[1]);
    let z2 = z * z;
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / z2,
        0.0,
        cam.fy / z,
        -cam.fy * y / z2,
    );
    let cov_pre = j * sigma_cam * j.transpose();
    let det_pre = cov_pre[(0, 0)] * cov_pre[(1, 1)] - cov_pre[(0, 1)] * cov_pre[(1, 0)];
    if det_pre <= cfg.det_floor {
        return Ok(None);
    }
    let a = cov_pre[(0, 0)] + cfg.dilation;
    let b = cov_pre[(0, 1)];
    let c = cov_pre[(1, 1)] + cfg.dilation;
    let det = a * c - b * b;
    let conic = (c / det, -b / det, a / det);
    let mean2d = Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy);

    let view_vec = act.position - cam.center();
    let view_norm = view_vec.norm();
    let view_dir = if view_norm > 1e-12 {
        view_vec / view_norm
    } else {
        Vector3::new(0.0, 0.0, 1.0)
    };
    let degree = set.active_sh_degree.min(set.max_sh_degree);
    let basis = sh::eval_basis(view_dir, degree);
    let bands = sh::basis_size(degree);
    let coeffs = set.sh_of(i);
    let bsz = set.basis_size();
    let mut color_pre = [0.0; 3];
    let mut color = [0.0; 3];
    for ch in 0..3 {
        let mut v = 0.5;
        for band in 0..bands {
            v += basis[band] * coeffs[ch * bsz + band];
        }
        color_pre[ch] = v;
        color[ch] = v.max(0.0);
    }
    Ok(Some(ProjectionFull {
        mean_cam,
        sigma_cam,
        j,
        cov: (a, b, c),
        conic,
        mean2d,
        depth: z,
        color,
        color_pre,
        view_dir,
        view_norm,
        opacity: act.opacity,
        scale: act.scale,
        rotation_unit: act.rotation,
    }))
}

/// Per-Gaussian projection results in set order, invisible entries flagged.
pub fn project(set: &GaussianSet, cam: &Camera, cfg: &RasterConfig) -> Result<Vec<Projected2D>> {
    set.validate()?;
    let mut out = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        match project_full(set, i, cam, cfg)? {
            Some(p) => out.push(Projected2D {
                visible: true,
                mean2d: p.mean2d,
                cov2d: Matrix2::new(p.cov.0, p.cov.1, p.cov.1, p.cov.2),
                depth: p.depth,
                color: p.color,
            }),
            None => out.push(Projected2D {
                visible: false,
                mean2d: Vector2::zeros(),
                cov2d: Matrix2::zeros(),
                depth: f64::INFINITY,
                color: [0.0; 3],
            }),
        }
    }
    Ok(out)
}

/// Bounding box of the `q <= q_cut` ellipse in pixel indices; `None` when it
/// misses the image. Pixel centers sit at integer + 0.5.
fn pixel_bbox(
    mean: Vector2<f64>,
    cov: (f64, f64, f64),
    q_cut: f64,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    let hx = (q_cut * cov.0).sqrt() + 1e-9;
    let hy = (q_cut * cov.2).sqrt() + 1e-9;
    let x_lo = (mean[0] - hx - 0.5).ceil();
    let x_hi = (mean[0] + hx - 0.5).floor();
    let y_lo = (mean[1] - hy - 0.5).ceil();
    let y_hi = (mean[1] + hy - 0.5).floor();
    if x_hi < 0.0 || y_hi < 0.0 || x_lo > (width - 1) as f64 || y_lo > (height - 1) as f64 {
        return None;
    }
    let x0 = x_lo.max(0.0) as usize;
    let x1 = (x_hi.min((width - 1) as f64) as usize) + 1;
    let y0 = y_lo.max(0.0) as usize;
    let y1 = (y_hi.min((height - 1) as f64) as usize) + 1;
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    Some((x0, x1, y0, y1))
}

pub(crate) fn prepare_sorted(
    set: &GaussianSet,
    cam: &Camera,
    cfg: &RasterConfig,
) -> Result<Vec<Prepared>> {
    let mut prepared = Vec::new();
    for i in 0..set.len() {
        let Some(p) = project_full(set, i, cam, cfg)? else {
            continue;
        };
        // alpha = opacity * exp(-q/2) >= floor implies q <= q_cut; the tiny
        // slack keeps the pre-test conservative against rounding.
        if p.opacity <= cfg.alpha_floor {
            continue;
        }
        let q_cut = 2.0 * (p.opacity / cfg.alpha_floor).ln() + 1e-12;
        let Some((x0, x1, y0, y1)) = pixel_bbox(p.mean2d, p.cov, q_cut, cam.width, cam.height)
        else {
            continue;
        };
        prepared.push(Prepared {
            index: i,
            mean: p.mean2d,
            conic: p.conic,
            color: p.color,
            opacity: p.opacity,
            depth: p.depth,
            q_cut,
            x0,
            x1,
            y0,
            y1,
        });
    }
    prepared.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.index.cmp(&b.index))
    });
    Ok(prepared)
}

/// Renders the set through `cam`. Deterministic: identical inputs produce a
/// bit-identical image.
pub fn rasterize_forward(
    set: &GaussianSet,
    cam: &Camera,
    cfg: &RasterConfig,
) -> Result<RenderBuffers> {
    set.validate()?;
    let (w, h) = (cam.width, cam.height);
    let prepared = prepare_sorted(set, cam, cfg)?;
    let mut image = Image::zeros(w, h);
    let mut transmittance = vec![1.0f64; w * h];
    let mut done = vec![false; w * h];

    for p in &prepared {
        let (ca, cb, cc) = p.conic;
        for y in p.y0..p.y1 {
            let py = y as f64 + 0.5 - p.mean[1];
            let row = y * w;
            for x in p.x0..p.x1 {
                let i = row + x;
                if done[i] {
                    continue;
                }
                let px = x as f64 + 0.5 - p.mean[0];
                let q = ca * px * px + 2.0 * cb * px * py + cc * py * py;
                if q > p.q_cut {
                    continue;
                }
                let raw = p.opacity * (-0.5 * q).exp();
                let alpha = if raw > cfg.alpha_cap { cfg.alpha_cap } else { raw };
                if alpha < cfg.alpha_floor {
                    continue;
                }
                let t = transmittance[i];
                let t_next = t * (1.0 - alpha);
                if t_next < cfg.transmittance_cutoff {
                    done[i] = true;
                    continue;
                }
                let wgt = alpha * t;
                let base = i * 3;
                image.data[base] += p.color[0] * wgt;
                image.data[base + 1] += p.color[1] * wgt;
                image.data[base + 2] += p.color[2] * wgt;
                transmittance[i] = t_next;
            }
        }
    }
    // Black background: nothing to add where transmittance remains.
    Ok(RenderBuffers {
        image,
        final_transmittance: transmittance,
        prepared,
        n_gaussians: set.len(),
    })
}

impl RenderBuffers {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{inverse_sigmoid, Camera};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_cam(w: usize, h: usize, f: f64, cx: f64, cy: f64) -> Camera {
        Camera::new(
            w,
            h,
            f,
            f,
            cx,
            cy,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    fn dc_for(color: [f64; 3], basis: usize) -> Vec<f64> {
        let mut sh = vec![0.0; 3 * basis];
        for ch in 0..3 {
            sh[ch * basis] = (color[ch] - 0.5) / crate::sh::SH_C0;
        }
        sh
    }

    fn one_gaussian(
        pos: Vector3<f64>,
        scale: f64,
        opacity: f64,
        color: [f64; 3],
    ) -> GaussianSet {
        let mut set = GaussianSet::new(0);
        set.push(
            pos,
            Vector3::new(scale.ln(), scale.ln(), scale.ln()),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            inverse_sigmoid(opacity),
            &dc_for(color, 1),
        );
        set
    }

    #[test]
    fn on_axis_projection_hits_principal_point() {
        let cam = identity_cam(8, 8, 100.0, 0.0, 0.0);
        let set = one_gaussian(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.5, [1.0, 1.0, 1.0]);
        let proj = project(&set, &cam, &RasterConfig::default()).unwrap();
        assert!(proj[0].visible);
        assert_relative_eq!(proj[0].mean2d[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(proj[0].mean2d[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(proj[0].depth, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn unit_covariance_projects_with_dilation() {
        // Identity world covariance at z=2 with f=1: J Sigma J^T = 0.25 I,
        // plus the 0.3 dilation on the diagonal.
        let cam = identity_cam(8, 8, 1.0, 4.0, 4.0);
        let set = one_gaussian(Vector3::new(0.0, 0.0, 2.0), 1.0, 0.5, [1.0, 1.0, 1.0]);
        let proj = project(&set, &cam, &RasterConfig::default()).unwrap();
        let cov = proj[0].cov2d;
        assert_relative_eq!(cov[(0, 0)], 0.55, epsilon = 1e-12);
        assert_relative_eq!(cov[(1, 1)], 0.55, epsilon = 1e-12);
        assert_relative_eq!(cov[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn near_plane_culls() {
        let cam = identity_cam(8, 8, 100.0, 4.0, 4.0);
        let cfg = RasterConfig::default();
        let behind = one_gaussian(Vector3::new(0.0, 0.0, -1.0), 0.1, 0.5, [1.0; 3]);
        assert!(!project(&behind, &cam, &cfg).unwrap()[0].visible);
        let at_plane = one_gaussian(Vector3::new(0.0, 0.0, 0.01), 0.1, 0.5, [1.0; 3]);
        assert!(!project(&at_plane, &cam, &cfg).unwrap()[0].visible);
    }

    #[test]
    fn center_pixel_value_is_opacity_times_color() {
        // Mean lands exactly on the center of pixel (8, 8).
        let cam = identity_cam(17, 17, 60.0, 8.5, 8.5);
        let color = [0.9, 0.5, 0.25];
        let set = one_gaussian(Vector3::new(0.0, 0.0, 2.0), 0.05, 0.8, color);
        let buf = rasterize_forward(&set, &cam, &RasterConfig::default()).unwrap();
        let got = buf.image.pixel(8, 8);
        for ch in 0..3 {
            assert_relative_eq!(got[ch], 0.8 * color[ch], epsilon = 1e-9);
        }
        assert_relative_eq!(
            buf.final_transmittance[8 * 17 + 8],
            1.0 - 0.8,
            epsilon = 1e-9
        );
    }

    #[test]
    fn compositing_is_front_to_back() {
        let cam = identity_cam(17, 17, 60.0, 8.5, 8.5);
        let mut set = one_gaussian(Vector3::new(0.0, 0.0, 2.0), 0.05, 0.6, [1.0, 0.0, 0.0]);
        let back = one_gaussian(Vector3::new(0.0, 0.0, 3.0), 0.075, 0.7, [0.0, 0.0, 1.0]);
        set.append_set(back).unwrap();
        let buf = rasterize_forward(&set, &cam, &RasterConfig::default()).unwrap();
        let got = buf.image.pixel(8, 8);
        assert_relative_eq!(got[0], 0.6, epsilon = 1e-9);
        assert_relative_eq!(got[2], 0.4 * 0.7, epsilon = 1e-9);
        assert_relative_eq!(got[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn transmittance_early_stop_rejects_crossing_contribution() {
        let cam = identity_cam(9, 9, 60.0, 4.5, 4.5);
        let mut set = GaussianSet::new(0);
        for k in 0..4 {
            set.append_set(one_gaussian(
                Vector3::new(0.0, 0.0, 2.0 + 0.2 * k as f64),
                0.05,
                0.998,
                [1.0, 1.0, 1.0],
            ))
            .unwrap();
        }
        let cfg = RasterConfig::default();
        let buf = rasterize_forward(&set, &cam, &cfg).unwrap();
        let t = buf.final_transmittance[4 * 9 + 4];
        // Contributions cap at 0.99: after two the transmittance is 1e-4,
        // the third would cross the cutoff and is rejected.
        assert!(t >= cfg.transmittance_cutoff);
        assert_relative_eq!(t, 1e-4, max_relative = 1e-9);
        let px = buf.image.pixel(4, 4);
        assert_relative_eq!(px[0], 0.99 + 0.01 * 0.99, epsilon = 1e-9);
    }

    #[test]
    fn weights_plus_transmittance_close_to_one() {
        // With all colors at exactly 1.0 each channel equals the per-pixel
        // weight sum, so channel + transmittance must reproduce 1.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = Camera::look_at(
            Vector3::new(0.0, -3.0, 0.0),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            32,
            32,
            40.0,
            40.0,
            16.0,
            16.0,
        )
        .unwrap();
        let mut set = GaussianSet::new(0);
        for _ in 0..40 {
            let q = Vector4::new(
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let s: f64 = rng.gen_range(0.05..0.3);
            set.push(
                Vector3::new(
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                ),
                Vector3::new(s.ln(), (s * 0.5).ln(), (s * 1.5).ln()),
                q,
                inverse_sigmoid(rng.gen_range(0.2..0.95)),
                &dc_for([1.0, 1.0, 1.0], 1),
            );
        }
        let buf = rasterize_forward(&set, &cam, &RasterConfig::default()).unwrap();
        for i in 0..(32 * 32) {
            let wsum = buf.image.data[i * 3];
            let t = buf.final_transmittance[i];
            assert!(
                (wsum + t - 1.0).abs() <= 1e-12,
                "pixel {i}: weights {wsum} + T {t}"
            );
            assert_eq!(buf.image.data[i * 3], buf.image.data[i * 3 + 1]);
            assert_eq!(buf.image.data[i * 3], buf.image.data[i * 3 + 2]);
        }
    }

    #[test]
    fn empty_set_renders_background() {
        let cam = identity_cam(8, 8, 10.0, 4.0, 4.0);
        let set = GaussianSet::new(0);
        let buf = rasterize_forward(&set, &cam, &RasterConfig::default()).unwrap();
        assert!(buf.image.data.iter().all(|&v| v == 0.0));
        assert!(buf.final_transmittance.iter().all(|&t| t == 1.0));
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cam = Camera::look_at(
            Vector3::new(2.0, 1.0, 2.0),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            24,
            24,
            30.0,
            30.0,
            12.0,
            12.0,
        )
        .unwrap();
        let mut set = GaussianSet::new(1);
        let bsz = set.basis_size();
        for _ in 0..20 {
            let mut sh = vec![0.0; 3 * bsz];
            for v in sh.iter_mut() {
                *v = rng.gen_range(-0.3..0.8);
            }
            set.push(
                Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ),
                Vector3::new(
                    rng.gen_range(-3.0..-1.5f64),
                    rng.gen_range(-3.0..-1.5),
                    rng.gen_range(-3.0..-1.5),
                ),
                Vector4::new(
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                rng.gen_range(-2.0..2.0),
                &sh,
            );
        }
        set.active_sh_degree = 1;
        let a = rasterize_forward(&set, &cam, &RasterConfig::default()).unwrap();
        let b = rasterize_forward(&set, &cam, &RasterConfig::default()).unwrap();
        assert_eq!(a.image.data, b.image.data);
        assert_eq!(a.final_transmittance, b.final_transmittance);
    }

    #[test]
    fn rigid_shift_of_scene_and_camera_is_invariant() {
        let shift = Vector3::new(3.0, -2.0, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let make = |offset: Vector3<f64>, rng: &mut ChaCha8Rng| {
            let mut set = GaussianSet::new(0);
            for _ in 0..12 {
                let s: f64 = rng.gen_range(0.05..0.2);
                set.push(
                    Vector3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    ) + offset,
                    Vector3::new(s.ln(), s.ln(), (s * 0.7).ln()),
                    Vector4::new(
                        rng.gen_range(-1.0..1.0f64),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ),
                    rng.gen_range(-1.0..1.5),
                    &dc_for([0.8, 0.6, 0.4], 1),
                );
            }
            set
        };
        let rng_state = rng.clone();
        let set_a = make(Vector3::zeros(), &mut rng);
        let mut rng2 = rng_state;
        let set_b = make(shift, &mut rng2);
        let eye = Vector3::new(2.5, 1.0, 1.2);
        let cam_a = Camera::look_at(
            eye,
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            32,
            32,
            40.0,
            40.0,
            16.0,
            16.0,
        )
        .unwrap();
        let cam_b = Camera::look_at(
            eye + shift,
            shift,
            Vector3::new(0.0, 0.0, 1.0),
            32,
            32,
            40.0,
            40.0,
            16.0,
            16.0,
        )
        .unwrap();
        let a = rasterize_forward(&set_a, &cam_a, &RasterConfig::default()).unwrap();
        let b = rasterize_forward(&set_b, &cam_b, &RasterConfig::default()).unwrap();
        for (pa, pb) in a.image.data.iter().zip(&b.image.data) {
            assert!((pa - pb).abs() < 1e-9, "{pa} vs {pb}");
        }
    }
}
