//! Disparity-difference consistency between the augmented and standard
//! branches, as smooth-L1 over valid pixels against a detached target.

use log::warn;

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Smooth-L1 between the masked maps, averaged over mask=1 pixels. The
/// standard-branch map is detached inside; an empty mask yields loss 0 with
/// a logged warning (it occurs early in the occlusion curriculum).
pub fn disparity_diff_loss<E: Elem>(
    tape: &Tape<E>,
    d_aug: &Tensor<E>,
    d_std: &Tensor<E>,
    mask: &Tensor<E>,
) -> Result<Tensor<E>> {
    if d_aug.shape() != d_std.shape() || d_aug.shape() != mask.shape() {
        return Err(Error::shape(
            "disparity_diff_loss",
            format!("{:?} vs {:?} vs mask {:?}", d_aug.shape(), d_std.shape(), mask.shape()),
        ));
    }
    let count = mask.values().iter().filter(|&&v| v != E::zero()).count();
    if count == 0 {
        warn!("disparity_diff_loss: empty valid mask, contributing 0");
        return Ok(Tensor::scalar(E::zero()));
    }
    let diff = tape.sub(d_aug, &d_std.detach())?;
    let masked = tape.mul(&diff, &mask.detach())?;
    let sl1 = tape.smooth_l1_unit(&masked);
    let total = tape.sum_all(&sl1);
    Ok(tape.mul_scalar(&total, E::one() / lit::<E>(count as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_maps_cost_nothing() {
        let tape = Tape::<f64>::new();
        let d = Tensor::from_vec(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let m = Tensor::<f64>::ones(vec![2, 3]);
        let l = disparity_diff_loss(&tape, &d, &d, &m).unwrap();
        assert_eq!(l.item().unwrap(), 0.0);
    }

    #[test]
    fn half_pixel_offset_in_quadratic_zone() {
        // |delta| = 0.5 everywhere, full mask: 0.5 * 0.5^2 = 0.125
        let tape = Tape::<f64>::new();
        let a = Tensor::full(vec![4, 4], 3.0);
        let b = Tensor::full(vec![4, 4], 2.5);
        let m = Tensor::<f64>::ones(vec![4, 4]);
        let l = disparity_diff_loss(&tape, &a, &b, &m).unwrap();
        assert!((l.item().unwrap() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_zero_not_error() {
        let tape = Tape::<f64>::new();
        let a = Tensor::full(vec![2, 2], 9.0);
        let b = Tensor::full(vec![2, 2], 1.0);
        let m = Tensor::<f64>::zeros(vec![2, 2]);
        let l = disparity_diff_loss(&tape, &a, &b, &m).unwrap();
        assert_eq!(l.item().unwrap(), 0.0);
    }

    #[test]
    fn target_branch_receives_no_gradient() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(&Tensor::full(vec![2, 2], 3.0));
        let b = tape.leaf(&Tensor::full(vec![2, 2], 2.0));
        let m = Tensor::<f64>::ones(vec![2, 2]);
        let l = disparity_diff_loss(&tape, &a, &b, &m).unwrap();
        let g = tape.backward(&l).unwrap();
        assert!(g.wrt(&a).unwrap().iter().any(|&v| v != 0.0));
        assert!(g.wrt(&b).unwrap().iter().all(|&v| v == 0.0));
    }
}
