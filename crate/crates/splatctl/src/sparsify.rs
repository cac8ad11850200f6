//! Opacity-threshold pruning.

use crate::core::{sigmoid, GaussianSet};
use crate::error::Result;
use crate::optim::SetEdit;

/// Remove every Gaussian whose activated opacity is strictly below `tau`.
/// Returns the structural edit (removed indices ascending) to mirror into
/// the optimizer and any pending split cursor.
pub fn prune(set: &mut GaussianSet, tau: f64) -> Result<SetEdit> {
    let removed: Vec<usize> = (0..set.len())
        .filter(|&i| sigmoid(set.opacity_logits[i]) < tau)
        .collect();
    if !removed.is_empty() {
        set.remove_indices(&removed)?;
    }
    Ok(SetEdit {
        removed,
        appended: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::inverse_sigmoid;
    use nalgebra::{Vector3, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set_with_opacities(alphas: &[f64]) -> GaussianSet {
        let mut set = GaussianSet::new(0);
        for &a in alphas {
            set.push(
                Vector3::zeros(),
                Vector3::zeros(),
                Vector4::new(1.0, 0.0, 0.0, 0.0),
                inverse_sigmoid(a),
                &[0.0; 3],
            );
        }
        set
    }

    #[test]
    fn removes_exactly_the_subthreshold_entries() {
        let mut set = set_with_opacities(&[0.9, 0.001, 0.5, 0.004, 0.3]);
        let edit = prune(&mut set, 0.005).unwrap();
        assert_eq!(edit.removed, vec![1, 3]);
        assert_eq!(set.len(), 3);
        for i in 0..set.len() {
            assert!(set.activated_opacity(i) >= 0.005);
        }
    }

    #[test]
    fn threshold_is_strict() {
        // An opacity exactly at tau survives.
        let tau = 0.005;
        let mut set = set_with_opacities(&[tau]);
        let alpha = set.activated_opacity(0);
        let edit = prune(&mut set, alpha).unwrap();
        assert!(edit.removed.is_empty());
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn pruning_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let alphas: Vec<f64> = (0..200).map(|_| rng.gen_range(1e-4..0.99)).collect();
        let mut set = set_with_opacities(&alphas);
        let first = prune(&mut set, 0.01).unwrap();
        assert!(!first.removed.is_empty());
        let second = prune(&mut set, 0.01).unwrap();
        assert!(second.removed.is_empty());
    }

    #[test]
    fn can_empty_the_set() {
        let mut set = set_with_opacities(&[0.001, 0.002]);
        let edit = prune(&mut set, 0.005).unwrap();
        assert_eq!(edit.removed.len(), 2);
        assert_eq!(set.len(), 0);
        let again = prune(&mut set, 0.005).unwrap();
        assert!(again.removed.is_empty());
    }
}
