//! Raw Gaussian parameter storage and camera geometry.
//!
//! Parameters are held unconstrained and pushed through fixed activations at
//! every point of use: scales through `exp`, opacities through the logistic
//! sigmoid, rotations through quaternion normalization. Gradients are always
//! taken with respect to the raw values and flow through the activations.
//!
//! All per-Gaussian arrays share the same leading dimension; structural edits
//! go through [`GaussianSet::remove_indices`] / [`GaussianSet::append_set`]
//! which preserve that invariant.

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{Error, Result};

/// Opacities are clamped into `[OPACITY_CLAMP, 1 - OPACITY_CLAMP]` before the
/// logit in [`inverse_activate`].
pub const OPACITY_CLAMP: f64 = 1e-6;
/// Inverse activation tolerates this much overshoot outside (0, 1) before it
/// reports an error instead of clamping silently.
pub const OPACITY_SLACK: f64 = 1e-3;
/// Scales are floored here before the log on initialization paths.
pub const MIN_SCALE: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn inverse_sigmoid(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

/// Activated view of one Gaussian.
#[derive(Clone, Copy, Debug)]
pub struct Activated {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    /// Unit quaternion, `(w, x, y, z)`.
    pub rotation: Vector4<f64>,
    pub opacity: f64,
}

/// Structure-of-arrays store for the raw optimization state.
#[derive(Clone, Debug)]
pub struct GaussianSet {
    pub positions: Vec<Vector3<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    /// Unnormalized quaternions, `(w, x, y, z)`.
    pub rotations: Vec<Vector4<f64>>,
    pub opacity_logits: Vec<f64>,
    /// Flat SH coefficients, `3 * basis_size()` per Gaussian, channel-major:
    /// all bands of R, then G, then B. Band 0 is the DC term.
    pub sh: Vec<f64>,
    pub max_sh_degree: usize,
    /// Bands above this degree are held at zero influence during rendering;
    /// raised stepwise during training up to `max_sh_degree`.
    pub active_sh_degree: usize,
}

impl GaussianSet {
    pub fn new(max_sh_degree: usize) -> Self {
        GaussianSet {
            positions: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            opacity_logits: Vec::new(),
            sh: Vec::new(),
            max_sh_degree,
            active_sh_degree: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of SH bands per channel, `(max_sh_degree + 1)^2`.
    pub fn basis_size(&self) -> usize {
        (self.max_sh_degree + 1) * (self.max_sh_degree + 1)
    }

    /// SH floats per Gaussian.
    pub fn sh_stride(&self) -> usize {
        3 * self.basis_size()
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    pub fn sh_of_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.sh_stride();
        &mut self.sh[i * s..(i + 1) * s]
    }

    pub fn push(
        &mut self,
        position: Vector3<f64>,
        log_scale: Vector3<f64>,
        rotation: Vector4<f64>,
        opacity_logit: f64,
        sh: &[f64],
    ) {
        assert_eq!(sh.len(), self.sh_stride(), "SH coefficient count");
        self.positions.push(position);
        self.log_scales.push(log_scale);
        self.rotations.push(rotation);
        self.opacity_logits.push(opacity_logit);
        self.sh.extend_from_slice(sh);
    }

    pub fn normalized_rotation(&self, i: usize) -> Result<Vector4<f64>> {
        let q = self.rotations[i];
        let n = q.norm();
        if n < 1e-12 {
            return Err(Error::DegenerateRotation(n));
        }
        Ok(q / n)
    }

    /// Activated view of Gaussian `i`. Fails on a zero-norm quaternion.
    pub fn activated(&self, i: usize) -> Result<Activated> {
        Ok(Activated {
            position: self.positions[i],
            scale: self.log_scales[i].map(f64::exp),
            rotation: self.normalized_rotation(i)?,
            opacity: sigmoid(self.opacity_logits[i]),
        })
    }

    pub fn activated_opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn activated_scale(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    /// Mean of all activated scale components; 0 for an empty set.
    pub fn mean_activated_scale(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .log_scales
            .iter()
            .map(|s| s[0].exp() + s[1].exp() + s[2].exp())
            .sum();
        sum / (3.0 * self.len() as f64)
    }

    /// Mean activated opacity; 0 for an empty set.
    pub fn mean_activated_opacity(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.opacity_logits.iter().map(|&l| sigmoid(l)).sum();
        sum / self.len() as f64
    }

    /// Removes the Gaussians at `sorted` (strictly increasing, in-bounds)
    /// while preserving the relative order of survivors.
    pub fn remove_indices(&mut self, sorted: &[usize]) -> Result<()> {
        if sorted.is_empty() {
            return Ok(());
        }
        let n = self.len();
        for w in sorted.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InconsistentEdit(
                    "removal indices not strictly increasing".into(),
                ));
            }
        }
        if *sorted.last().unwrap() >= n {
            return Err(Error::InconsistentEdit(format!(
                "removal index {} out of bounds for {} Gaussians",
                sorted.last().unwrap(),
                n
            )));
        }
        let stride = self.sh_stride();
        let mut keep = vec![true; n];
        for &i in sorted {
            keep[i] = false;
        }
        let mut w = 0;
        for r in 0..n {
            if keep[r] {
                if w != r {
                    self.positions[w] = self.positions[r];
                    self.log_scales[w] = self.log_scales[r];
                    self.rotations[w] = self.rotations[r];
                    self.opacity_logits[w] = self.opacity_logits[r];
                    self.sh.copy_within(r * stride..(r + 1) * stride, w * stride);
                }
                w += 1;
            }
        }
        self.positions.truncate(w);
        self.log_scales.truncate(w);
        self.rotations.truncate(w);
        self.opacity_logits.truncate(w);
        self.sh.truncate(w * stride);
        Ok(())
    }

    /// Appends `other` at the end. SH layouts must agree.
    pub fn append_set(&mut self, other: GaussianSet) -> Result<()> {
        if other.max_sh_degree != self.max_sh_degree {
            return Err(Error::ShapeMismatch(format!(
                "SH degree {} vs {}",
                other.max_sh_degree, self.max_sh_degree
            )));
        }
        self.positions.extend(other.positions);
        self.log_scales.extend(other.log_scales);
        self.rotations.extend(other.rotations);
        self.opacity_logits.extend(other.opacity_logits);
        self.sh.extend(other.sh);
        Ok(())
    }

    /// Checks that every array agrees on the leading dimension.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let ok = self.log_scales.len() == n
            && self.rotations.len() == n
            && self.opacity_logits.len() == n
            && self.sh.len() == n * self.sh_stride()
            && self.active_sh_degree <= self.max_sh_degree;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "arrays disagree on N={}: scales {}, rotations {}, opacities {}, sh {}",
                n,
                self.log_scales.len(),
                self.rotations.len(),
                self.opacity_logits.len(),
                self.sh.len()
            )))
        }
    }
}

/// Maps activated opacity and scale back to raw storage. The opacity is
/// clamped into `[1e-6, 1 - 1e-6]`; values outside (0, 1) by more than
/// [`OPACITY_SLACK`] are rejected instead of silently clamped.
pub fn inverse_activate(opacity: f64, scale: Vector3<f64>) -> Result<(f64, Vector3<f64>)> {
    if !opacity.is_finite() || opacity < -OPACITY_SLACK || opacity > 1.0 + OPACITY_SLACK {
        return Err(Error::OpacityOutOfRange(opacity));
    }
    let a = opacity.clamp(OPACITY_CLAMP, 1.0 - OPACITY_CLAMP);
    let log_scale = scale.map(|s| s.max(MIN_SCALE).ln());
    Ok((inverse_sigmoid(a), log_scale))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_rot(q: Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// World-space covariance `R diag(s)^2 R^T` from activated scale and a unit
/// quaternion. Computed as `(R S)(R S)^T`, which is symmetric exactly.
pub fn build_covariance(scale: Vector3<f64>, rotation: Vector4<f64>) -> Matrix3<f64> {
    let r = quat_to_rot(rotation);
    let mut m = r;
    for c in 0..3 {
        for row in 0..3 {
            m[(row, c)] *= scale[c];
        }
    }
    m * m.transpose()
}

/// Pinhole camera with a world-to-camera rigid pose. The camera frame is
/// x-right, y-down, z-forward; a point is visible when its camera z is
/// positive (beyond the near plane).
#[derive(Clone, Debug)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation (rows: right, down, forward).
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera(format!(
                "degenerate image size {width}x{height}"
            )));
        }
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive: fx={fx}, fy={fy}"
            )));
        }
        let gram = rotation.transpose() * rotation;
        let mut dev: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                dev = dev.max((gram[(r, c)] - want).abs());
            }
        }
        if dev > 1e-6 {
            return Err(Error::InvalidCamera(format!(
                "rotation not orthonormal (max deviation {dev:.3e})"
            )));
        }
        Ok(Camera {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera at `eye` looking toward `target`, `up` fixing the roll.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("view direction parallel to up".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -(rotation * eye);
        Camera::new(width, height, fx, fy, cx, cy, rotation, translation)
    }
}
