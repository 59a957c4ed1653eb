//! Per-pixel structural similarity over a 3x3 uniform window, composed from
//! differentiable primitives. Stabilizers follow the common choice for
//! stereo losses on [0,1] intensities: C1 = 0.01^2, C2 = 0.03^2.

use crate::elem::{lit, Elem};
use crate::error::Result;
use crate::ops::same_shape;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const SSIM_C1: f64 = 1.0e-4;
pub const SSIM_C2: f64 = 9.0e-4;

impl<E: Elem> Tape<E> {
    /// Per-pixel SSIM map of two `[C,H,W]` images in `[0,1]`. Values lie in
    /// `[-1, 1]`; local statistics use a 3x3 clamp-to-edge window.
    pub fn ssim_map(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("ssim_map", a, b)?;
        let c1 = lit::<E>(SSIM_C1);
        let c2 = lit::<E>(SSIM_C2);
        let two = lit::<E>(2.0);

        let mu_a = self.box_filter3(a)?;
        let mu_b = self.box_filter3(b)?;
        let aa = self.mul(a, a)?;
        let bb = self.mul(b, b)?;
        let ab = self.mul(a, b)?;
        let mu_aa = self.box_filter3(&aa)?;
        let mu_bb = self.box_filter3(&bb)?;
        let mu_ab = self.box_filter3(&ab)?;

        let mu_a2 = self.mul(&mu_a, &mu_a)?;
        let mu_b2 = self.mul(&mu_b, &mu_b)?;
        let mu_a_mu_b = self.mul(&mu_a, &mu_b)?;
        let var_a = self.sub(&mu_aa, &mu_a2)?;
        let var_b = self.sub(&mu_bb, &mu_b2)?;
        let cov = self.sub(&mu_ab, &mu_a_mu_b)?;

        // ((2 mu_a mu_b + C1)(2 cov + C2)) / ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2))
        let num1 = self.add_scalar(&self.mul_scalar(&mu_a_mu_b, two), c1);
        let num2 = self.add_scalar(&self.mul_scalar(&cov, two), c2);
        let den1 = self.add_scalar(&self.add(&mu_a2, &mu_b2)?, c1);
        let den2 = self.add_scalar(&self.add(&var_a, &var_b)?, c2);
        let num = self.mul(&num1, &num2)?;
        let den = self.mul(&den1, &den2)?;
        self.div(&num, &den)
    }
}

#[cfg(test)]
mod tests {
    use super::{SSIM_C1, SSIM_C2};
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn ssim_of_image_with_itself_is_one() {
        let tape = Tape::<f64>::new();
        let vals: Vec<f64> = (0..48).map(|i| ((i * 37 % 19) as f64) / 19.0).collect();
        let a = Tensor::from_vec(vec![3, 4, 4], vals).unwrap();
        let m = tape.ssim_map(&a, &a).unwrap();
        for &v in m.values() {
            assert!((v - 1.0).abs() < 1e-9, "got {v}");
        }
    }

    #[test]
    fn constant_patch_closed_form() {
        // a = 0.2, b = 0.8: variances and covariance are 0, so
        // SSIM = (2*0.16 + C1)/(0.04 + 0.64 + C1) * C2/C2.
        let tape = Tape::<f64>::new();
        let a = Tensor::full(vec![1, 5, 5], 0.2);
        let b = Tensor::full(vec![1, 5, 5], 0.8);
        let m = tape.ssim_map(&a, &b).unwrap();
        let expect = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.2f64.powi(2) + 0.8f64.powi(2) + SSIM_C1);
        for &v in m.values() {
            assert!((v - expect).abs() < 1e-12);
        }
        // touch the constants so the closed form stays in sync with the op
        assert_eq!(SSIM_C2, 9.0e-4);
    }

    #[test]
    fn center_matches_scalar_brute_force_on_3x3() {
        let tape = Tape::<f64>::new();
        let av = vec![0.1, 0.5, 0.3, 0.9, 0.2, 0.7, 0.4, 0.6, 0.8];
        let bv = vec![0.3, 0.1, 0.9, 0.5, 0.4, 0.2, 0.8, 0.7, 0.6];
        let a = Tensor::from_vec(vec![1, 3, 3], av.clone()).unwrap();
        let b = Tensor::from_vec(vec![1, 3, 3], bv.clone()).unwrap();
        let m = tape.ssim_map(&a, &b).unwrap();

        // Scalar SSIM of the full window (the center pixel's window is the
        // whole 3x3 patch).
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ma = mean(&av);
        let mb = mean(&bv);
        let va = mean(&av.iter().map(|x| x * x).collect::<Vec<_>>()) - ma * ma;
        let vb = mean(&bv.iter().map(|x| x * x).collect::<Vec<_>>()) - mb * mb;
        let cov = mean(&av.iter().zip(&bv).map(|(x, y)| x * y).collect::<Vec<_>>()) - ma * mb;
        let expect = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        assert!((m.values()[4] - expect).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let tape = Tape::<f64>::new();
        let a = Tensor::<f64>::zeros(vec![1, 3, 3]);
        let b = Tensor::<f64>::zeros(vec![1, 3, 4]);
        assert!(tape.ssim_map(&a, &b).is_err());
    }
}
