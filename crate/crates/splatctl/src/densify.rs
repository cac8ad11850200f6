//! Uniform eight-way splitting.
//!
//! A split replaces a parent with eight children placed at the corners of a
//! half-unit cube in the parent's own frame: offsets of a quarter of the
//! parent scale along each principal axis, rotated into world space. Children
//! shrink by a fixed factor and inherit the parent's rotation and spherical
//! harmonics. Opacity follows `alpha_child = 1 - sqrt(1 - alpha_parent)`, so
//! two stacked children composite to exactly the parent's alpha.

use crate::core::{quat_to_rot, GaussianSet};
use crate::error::{Error, Result};
use crate::optim::SetEdit;
use rand::seq::SliceRandom;
use rand::Rng;

pub const SPLIT_CHILDREN: usize = 8;
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
pub const SPLIT_OFFSET: f64 = 0.25;

/// Per-axis offset signs of child `i`, bit k of `i` selecting the sign on
/// axis k.
fn child_delta(i: usize) -> [f64; 3] {
    let mut d = [0.0; 3];
    for (k, dk) in d.iter_mut().enumerate() {
        *dk = if (i >> k) & 1 == 1 {
            SPLIT_OFFSET
        } else {
            -SPLIT_OFFSET
        };
    }
    d
}

/// Child opacity logit such that `(1 - alpha_child)^2 = 1 - alpha_parent`.
/// Uses `alpha_child = alpha_parent / (1 + sqrt(1 - alpha_parent))` to avoid
/// cancellation for nearly transparent parents.
fn child_opacity_logit(parent_logit: f64) -> f64 {
    let alpha_p = crate::core::sigmoid(parent_logit);
    let one_minus = crate::core::sigmoid(-parent_logit);
    let r = one_minus.sqrt();
    let alpha_c = alpha_p / (1.0 + r);
    alpha_c.ln() - r.ln()
}

/// Split every listed parent (strictly increasing indices) into eight
/// children, removing the parents. Children are appended in parent order,
/// eight per parent in [`child_delta`] order. Returns the structural edit to
/// mirror into the optimizer.
pub fn split_parents(set: &mut GaussianSet, parents: &[usize]) -> Result<SetEdit> {
    for w in parents.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InconsistentEdit(
                "split indices must be strictly increasing".into(),
            ));
        }
    }
    if let Some(&last) = parents.last() {
        if last >= set.len() {
            return Err(Error::InconsistentEdit(format!(
                "split index {last} out of bounds for {} Gaussians",
                set.len()
            )));
        }
    }
    let stride = set.sh_stride();
    let mut children = GaussianSet::new(set.max_sh_degree);
    for &p in parents {
        let q = set.normalized_rotation(p)?;
        let rot = quat_to_rot(q);
        let scale = set.activated_scale(p);
        let log_scale = set.log_scales[p] - nalgebra::Vector3::repeat(SPLIT_SCALE_DIVISOR.ln());
        let logit = child_opacity_logit(set.opacity_logits[p]);
        let sh: Vec<f64> = set.sh[p * stride..(p + 1) * stride].to_vec();
        for i in 0..SPLIT_CHILDREN {
            let d = child_delta(i);
            let local = nalgebra::Vector3::new(d[0] * scale.x, d[1] * scale.y, d[2] * scale.z);
            children.push(
                set.positions[p] + rot * local,
                log_scale,
                set.rotations[p],
                logit,
                &sh,
            );
        }
    }
    let appended = children.len();
    set.remove_indices(parents)?;
    set.append_set(children)?;
    Ok(SetEdit {
        removed: parents.to_vec(),
        appended,
    })
}

/// Walks one splitting round in randomized batches. Holds the indices of
/// parents not yet split this round; indices refer to the *current* set, so
/// every structural edit in between must be reported via
/// [`SplitBatchCursor::remap_after_removal`].
#[derive(Clone, Debug, Default)]
pub struct SplitBatchCursor {
    pending: Vec<usize>,
    batch_size: usize,
}

impl SplitBatchCursor {
    /// Start a round over the given parents in randomized order.
    pub fn new_round<R: Rng>(mut parents: Vec<usize>, batch_size: usize, rng: &mut R) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        parents.shuffle(rng);
        SplitBatchCursor {
            pending: parents,
            batch_size,
        }
    }

    pub fn has_next(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Next batch of at most `batch_size` parents, sorted ascending. The
    /// returned indices are no longer pending.
    pub fn take_batch(&mut self) -> Vec<usize> {
        let n = self.batch_size.min(self.pending.len());
        let mut batch: Vec<usize> = self.pending.drain(..n).collect();
        batch.sort_unstable();
        batch
    }

    /// Account for entries removed from the set (strictly increasing
    /// indices): pending parents that were removed are dropped, the rest
    /// shift down.
    pub fn remap_after_removal(&mut self, removed: &[usize]) {
        if removed.is_empty() {
            return;
        }
        self.pending.retain_mut(|p| match removed.binary_search(p) {
            Ok(_) => false,
            Err(shift) => {
                *p -= shift;
                true
            }
        });
    }
}
