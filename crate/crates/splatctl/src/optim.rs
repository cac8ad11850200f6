//! Adam over the raw parameter arrays.
//!
//! Moment buffers mirror the [`GaussianSet`] layout element for element, so
//! every structural edit of the set must be mirrored here through
//! [`Adam::sync_topology`] before the next step. Newly appended Gaussians
//! start with zero moments; survivors keep theirs.

use crate::core::GaussianSet;
use crate::error::{Error, Result};
use crate::render::Gradients;
use nalgebra::{Vector3, Vector4};

#[derive(Clone, Copy, Debug)]
pub struct OptimConfig {
    /// Position learning rate at step 0, scaled by the scene extent.
    pub position_lr_init: f64,
    /// Position learning rate at `max_steps`, scaled by the scene extent.
    pub position_lr_final: f64,
    pub log_scale_lr: f64,
    pub rotation_lr: f64,
    pub opacity_lr: f64,
    pub sh_dc_lr: f64,
    /// Higher-band coefficients train at `sh_dc_lr / sh_rest_divisor`.
    pub sh_rest_divisor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Horizon of the position schedule; the rate is held at its final value
    /// beyond it.
    pub max_steps: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            position_lr_init: 1.6e-4,
            position_lr_final: 1.6e-6,
            log_scale_lr: 5e-3,
            rotation_lr: 1e-3,
            opacity_lr: 5e-2,
            sh_dc_lr: 2.5e-3,
            sh_rest_divisor: 20.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            max_steps: 30_000,
        }
    }
}

/// A structural edit applied to the Gaussian set: indices removed (strictly
/// increasing, pre-removal numbering) followed by `appended` new entries.
#[derive(Clone, Debug, Default)]
pub struct SetEdit {
    pub removed: Vec<usize>,
    pub appended: usize,
}

pub struct Adam {
    pub cfg: OptimConfig,
    /// Multiplier on the position schedule, normally the scene extent.
    pub scene_extent: f64,
    step: u64,
    m_pos: Vec<Vector3<f64>>,
    v_pos: Vec<Vector3<f64>>,
    m_scale: Vec<Vector3<f64>>,
    v_scale: Vec<Vector3<f64>>,
    m_rot: Vec<Vector4<f64>>,
    v_rot: Vec<Vector4<f64>>,
    m_op: Vec<f64>,
    v_op: Vec<f64>,
    m_sh: Vec<f64>,
    v_sh: Vec<f64>,
    sh_stride: usize,
}

fn adam_update(m: &mut f64, v: &mut f64, g: f64, lr: f64, c: &OptimConfig, bc1: f64, bc2: f64) -> f64 {
    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
    lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps)
}

impl Adam {
    pub fn new(cfg: OptimConfig, set: &GaussianSet, scene_extent: f64) -> Adam {
        let n = set.len();
        Adam {
            cfg,
            scene_extent,
            step: 0,
            m_pos: vec![Vector3::zeros(); n],
            v_pos: vec![Vector3::zeros(); n],
            m_scale: vec![Vector3::zeros(); n],
            v_scale: vec![Vector3::zeros(); n],
            m_rot: vec![Vector4::zeros(); n],
            v_rot: vec![Vector4::zeros(); n],
            m_op: vec![0.0; n],
            v_op: vec![0.0; n],
            m_sh: vec![0.0; n * set.sh_stride()],
            v_sh: vec![0.0; n * set.sh_stride()],
            sh_stride: set.sh_stride(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Position learning rate after `t` completed steps: log-linear decay
    /// from init to final over `max_steps`, times the scene extent.
    pub fn position_lr(&self, t: u64) -> f64 {
        let c = &self.cfg;
        let frac = (t as f64 / c.max_steps as f64).min(1.0);
        self.scene_extent
            * c.position_lr_init
            * (c.position_lr_final / c.position_lr_init).powf(frac)
    }

    /// One Adam step over every parameter group.
    pub fn step(&mut self, set: &mut GaussianSet, grads: &Gradients) -> Result<()> {
        let n = set.len();
        if self.m_pos.len() != n {
            return Err(Error::InconsistentEdit(format!(
                "optimizer tracks {} Gaussians but set has {n}",
                self.m_pos.len()
            )));
        }
        if grads.positions.len() != n || grads.sh.len() != n * self.sh_stride {
            return Err(Error::ShapeMismatch("gradient arrays".into()));
        }
        let pos_lr = self.position_lr(self.step);
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let basis = set.basis_size();
        let sh_rest_lr = c.sh_dc_lr / c.sh_rest_divisor;
        for i in 0..n {
            for k in 0..3 {
                set.positions[i][k] -= adam_update(
                    &mut self.m_pos[i][k],
                    &mut self.v_pos[i][k],
                    grads.positions[i][k],
                    pos_lr,
                    &c,
                    bc1,
                    bc2,
                );
                set.log_scales[i][k] -= adam_update(
                    &mut self.m_scale[i][k],
                    &mut self.v_scale[i][k],
                    grads.log_scales[i][k],
                    c.log_scale_lr,
                    &c,
                    bc1,
                    bc2,
                );
            }
            for k in 0..4 {
                set.rotations[i][k] -= adam_update(
                    &mut self.m_rot[i][k],
                    &mut self.v_rot[i][k],
                    grads.rotations[i][k],
                    c.rotation_lr,
                    &c,
                    bc1,
                    bc2,
                );
            }
            set.opacity_logits[i] -= adam_update(
                &mut self.m_op[i],
                &mut self.v_op[i],
                grads.opacity_logits[i],
                c.opacity_lr,
                &c,
                bc1,
                bc2,
            );
            let base = i * self.sh_stride;
            for ch in 0..3 {
                for b in 0..basis {
                    let j = base + ch * basis + b;
                    let lr = if b == 0 { c.sh_dc_lr } else { sh_rest_lr };
                    set.sh[j] -= adam_update(
                        &mut self.m_sh[j],
                        &mut self.v_sh[j],
                        grads.sh[j],
                        lr,
                        &c,
                        bc1,
                        bc2,
                    );
                }
            }
        }
        Ok(())
    }

    /// Mirror a structural edit of the set: drop moments of removed entries
    /// (keeping order) and append zero moments for new ones.
    pub fn sync_topology(&mut self, edit: &SetEdit) -> Result<()> {
        let n = self.m_pos.len();
        for w in edit.removed.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InconsistentEdit(
                    "removal indices must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = edit.removed.last() {
            if last >= n {
                return Err(Error::InconsistentEdit(format!(
                    "removal index {last} out of bounds for {n} tracked Gaussians"
                )));
            }
        }
        fn compact<T: Copy>(data: &mut Vec<T>, removed: &[usize], stride: usize) {
            let mut write = 0usize;
            let mut next = 0usize;
            let n = data.len() / stride;
            for read in 0..n {
                if next < removed.len() && removed[next] == read {
                    next += 1;
                    continue;
                }
                if write != read {
                    let (w, r) = (write * stride, read * stride);
                    for k in 0..stride {
                        data[w + k] = data[r + k];
                    }
                }
                write += 1;
            }
            data.truncate(write * stride);
        }
        compact(&mut self.m_pos, &edit.removed, 1);
        compact(&mut self.v_pos, &edit.removed, 1);
        compact(&mut self.m_scale, &edit.removed, 1);
        compact(&mut self.v_scale, &edit.removed, 1);
        compact(&mut self.m_rot, &edit.removed, 1);
        compact(&mut self.v_rot, &edit.removed, 1);
        compact(&mut self.m_op, &edit.removed, 1);
        compact(&mut self.v_op, &edit.removed, 1);
        compact(&mut self.m_sh, &edit.removed, self.sh_stride);
        compact(&mut self.v_sh, &edit.removed, self.sh_stride);
        self.m_pos.extend(std::iter::repeat(Vector3::zeros()).take(edit.appended));
        self.v_pos.extend(std::iter::repeat(Vector3::zeros()).take(edit.appended));
        self.m_scale.extend(std::iter::repeat(Vector3::zeros()).take(edit.appended));
        self.v_scale.extend(std::iter::repeat(Vector3::zeros()).take(edit.appended));
        self.m_rot.extend(std::iter::repeat(Vector4::zeros()).take(edit.appended));
        self.v_rot.extend(std::iter::repeat(Vector4::zeros()).take(edit.appended));
        self.m_op.extend(std::iter::repeat(0.0).take(edit.appended));
        self.v_op.extend(std::iter::repeat(0.0).take(edit.appended));
        self.m_sh
            .extend(std::iter::repeat(0.0).take(edit.appended * self.sh_stride));
        self.v_sh
            .extend(std::iter::repeat(0.0).take(edit.appended * self.sh_stride));
        Ok(())
    }

    pub fn tracked(&self) -> usize {
        self.m_pos.len()
    }
}

/// Raise the active spherical-harmonics degree one band every `interval`
/// steps until the storage maximum is reached. Returns true on promotion.
pub fn maybe_promote_sh(set: &mut GaussianSet, t: u64, interval: u64) -> bool {
    if interval > 0 && t > 0 && t % interval == 0 && set.active_sh_degree < set.max_sh_degree {
        set.active_sh_degree += 1;
        true
    } else {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::inverse_sigmoid;
    use approx::assert_relative_eq;

    fn one_gaussian(degree: usize) -> GaussianSet {
        let mut set = GaussianSet::new(degree);
        let stride = 3 * (degree + 1) * (degree + 1);
        set.push(
            Vector3::zeros(),
            Vector3::zeros(),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            inverse_sigmoid(0.5),
            &vec![0.0; stride],
        );
        set
    }

    fn zero_grads(set: &GaussianSet) -> Gradients {
        Gradients::zeros_like(set)
    }

    #[test]
    fn first_step_matches_reference_formula() {
        let mut set = one_gaussian(0);
        let mut adam = Adam::new(OptimConfig::default(), &set, 1.0);
        let mut g = zero_grads(&set);
        g.opacity_logits[0] = 0.3;
        let before = set.opacity_logits[0];
        adam.step(&mut set, &g).unwrap();
        let c = OptimConfig::default();
        let m = (1.0 - c.beta1) * 0.3;
        let v = (1.0 - c.beta2) * 0.3 * 0.3;
        let want = c.opacity_lr * (m / (1.0 - c.beta1)) / ((v / (1.0 - c.beta2)).sqrt() + c.eps);
        assert_relative_eq!(before - set.opacity_logits[0], want, epsilon = 1e-15);
    }

    #[test]
    fn constant_positive_gradient_drives_logits_down() {
        let mut set = one_gaussian(0);
        let mut adam = Adam::new(OptimConfig::default(), &set, 1.0);
        let mut last = set.opacity_logits[0];
        for _ in 0..50 {
            let mut g = zero_grads(&set);
            g.opacity_logits[0] = 0.05;
            adam.step(&mut set, &g).unwrap();
            assert!(set.opacity_logits[0] < last);
            last = set.opacity_logits[0];
        }
    }

    #[test]
    fn position_schedule_endpoints_and_midpoint() {
        let set = one_gaussian(0);
        let cfg = OptimConfig {
            max_steps: 1000,
            ..OptimConfig::default()
        };
        let adam = Adam::new(cfg, &set, 2.5);
        assert_relative_eq!(adam.position_lr(0), 2.5 * 1.6e-4, epsilon = 1e-18);
        assert_relative_eq!(adam.position_lr(1000), 2.5 * 1.6e-6, epsilon = 1e-18);
        // Log-linear: the midpoint is the geometric mean of the endpoints.
        assert_relative_eq!(
            adam.position_lr(500),
            2.5 * (1.6e-4f64 * 1.6e-6).sqrt(),
            epsilon = 1e-15
        );
        assert_relative_eq!(adam.position_lr(5000), 2.5 * 1.6e-6, epsilon = 1e-18);
    }

    #[test]
    fn sh_bands_train_twenty_times_slower_than_dc() {
        let mut set = one_gaussian(1);
        let mut adam = Adam::new(OptimConfig::default(), &set, 1.0);
        let mut g = zero_grads(&set);
        g.sh[0] = 1.0; // channel 0, DC
        g.sh[1] = 1.0; // channel 0, first band-1 coefficient
        adam.step(&mut set, &g).unwrap();
        let d_dc = -set.sh[0];
        let d_rest = -set.sh[1];
        assert_relative_eq!(d_dc / d_rest, 20.0, epsilon = 1e-9);
    }

    #[test]
    fn topology_sync_keeps_moments_aligned() {
        let mut set = one_gaussian(0);
        set.push(
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::zeros(),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            0.0,
            &[1.0, 2.0, 3.0],
        );
        set.push(
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::zeros(),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            0.0,
            &[4.0, 5.0, 6.0],
        );
        let mut adam = Adam::new(OptimConfig::default(), &set, 1.0);
        // Make per-entry moments distinguishable.
        let mut g = Gradients::zeros_like(&set);
        for i in 0..3 {
            g.opacity_logits[i] = (i + 1) as f64;
            g.sh[i * 3] = (i + 1) as f64 * 10.0;
        }
        adam.step(&mut set, &g).unwrap();
        let m1 = adam.m_op[1];
        let m2 = adam.m_op[2];
        let msh2 = adam.m_sh[2 * 3];
        adam.sync_topology(&SetEdit {
            removed: vec![0],
            appended: 2,
        })
        .unwrap();
        assert_eq!(adam.tracked(), 4);
        assert_eq!(adam.m_op[0], m1);
        assert_eq!(adam.m_op[1], m2);
        assert_eq!(adam.m_sh[3], msh2);
        assert_eq!(adam.m_op[2], 0.0);
        assert_eq!(adam.v_op[3], 0.0);
        // The set must be edited the same way before stepping again.
        set.remove_indices(&[0]).unwrap();
        let g = zero_grads(&set);
        assert!(adam.step(&mut set, &g).is_err());
    }

    #[test]
    fn sync_rejects_bad_indices() {
        let set = one_gaussian(0);
        let mut adam = Adam::new(OptimConfig::default(), &set, 1.0);
        assert!(adam
            .sync_topology(&SetEdit {
                removed: vec![3],
                appended: 0
            })
            .is_err());
        assert!(adam
            .sync_topology(&SetEdit {
                removed: vec![0, 0],
                appended: 0
            })
            .is_err());
    }

    #[test]
    fn sh_promotion_schedule() {
        let mut set = one_gaussian(3);
        assert_eq!(set.active_sh_degree, 0);
        assert!(!maybe_promote_sh(&mut set, 0, 1000));
        assert!(!maybe_promote_sh(&mut set, 999, 1000));
        assert!(maybe_promote_sh(&mut set, 1000, 1000));
        assert_eq!(set.active_sh_degree, 1);
        assert!(maybe_promote_sh(&mut set, 2000, 1000));
        assert!(maybe_promote_sh(&mut set, 3000, 1000));
        assert_eq!(set.active_sh_degree, 3);
        assert!(!maybe_promote_sh(&mut set, 4000, 1000));
        assert_eq!(set.active_sh_degree, 3);
    }
}
