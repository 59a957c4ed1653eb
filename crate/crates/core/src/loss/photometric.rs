//! Photometric reconstruction loss: warp the right view by the predicted
//! disparity and compare against the left view with a weighted SSIM + L1
//! objective. Out-of-view and explicitly excluded pixels are dropped from
//! the mean.

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// `alpha` weights the SSIM term against L1; pixels with `exclude = 1` are
/// omitted along with out-of-view warps. Differentiable in both images and
/// the disparity.
pub fn photometric_loss<E: Elem>(
    tape: &Tape<E>,
    left: &Tensor<E>,
    right: &Tensor<E>,
    disparity: &Tensor<E>,
    exclude: Option<&Tensor<E>>,
    alpha: f64,
) -> Result<Tensor<E>> {
    if left.shape() != right.shape() || left.shape().len() != 3 {
        return Err(Error::shape(
            "photometric_loss",
            format!("left {:?} vs right {:?}", left.shape(), right.shape()),
        ));
    }
    let (c, h, w) = (left.shape()[0], left.shape()[1], left.shape()[2]);
    if disparity.shape() != [h, w] {
        return Err(Error::shape(
            "photometric_loss",
            format!("disparity {:?} vs {}x{}", disparity.shape(), h, w),
        ));
    }
    let warp = tape.warp_horizontal(right, disparity)?;

    let ssim = tape.ssim_map(left, &warp.warped)?;
    // (1 - ssim) / 2, averaged over channels
    let ssim_pix = tape.mean_axis(&ssim, 0, false)?;
    let ssim_term = tape.mul_scalar(&tape.add_scalar(&tape.neg(&ssim_pix), E::one()), lit::<E>(0.5));

    let l1 = tape.abs(&tape.sub(left, &warp.warped)?);
    let l1_term = tape.mean_axis(&l1, 0, false)?;

    let a = lit::<E>(alpha);
    let per_pixel = tape.add(&tape.mul_scalar(&ssim_term, a), &tape.mul_scalar(&l1_term, E::one() - a))?;

    // inclusion mask: in view and not excluded
    let mut incl = warp.in_view.values().to_vec();
    if let Some(ex) = exclude {
        if ex.shape() != [h, w] {
            return Err(Error::shape("photometric_loss", format!("exclude {:?} vs {}x{}", ex.shape(), h, w)));
        }
        for (m, &e) in incl.iter_mut().zip(ex.values()) {
            if e != E::zero() {
                *m = E::zero();
            }
        }
    }
    let count = incl.iter().filter(|&&m| m != E::zero()).count();
    if count == 0 {
        return Err(Error::EmptyMask { op: "photometric_loss" });
    }
    let mask = Tensor::with_node(vec![h, w], incl, None);
    let masked = tape.mul(&per_pixel, &mask)?;
    let total = tape.sum_all(&masked);
    let _ = c;
    Ok(tape.mul_scalar(&total, E::one() / lit::<E>(count as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::WarpOutput;

    fn rand_img(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        Tensor::from_vec(vec![c, h, w], (0..c * h * w).map(|_| next()).collect()).unwrap()
    }

    #[test]
    fn perfect_reconstruction_is_zero() {
        let tape = Tape::<f64>::new();
        let img = rand_img(3, 8, 8, 5);
        let d = Tensor::<f64>::zeros(vec![8, 8]);
        let l = photometric_loss(&tape, &img, &img, &d, None, 0.85).unwrap();
        assert!(l.item().unwrap().abs() < 1e-9);
    }

    #[test]
    fn matches_scalar_brute_force() {
        // term-by-term scalar evaluation of the objective on a random pair
        let tape = Tape::<f64>::new();
        let (c, h, w) = (1usize, 8usize, 8usize);
        let left = rand_img(c, h, w, 7);
        let right = rand_img(c, h, w, 8);
        let dvals: Vec<f64> = (0..h * w).map(|i| 0.5 + 0.05 * (i % 7) as f64).collect();
        let disp = Tensor::from_vec(vec![h, w], dvals.clone()).unwrap();
        let alpha = 0.85;
        let loss = photometric_loss(&tape, &left, &right, &disp, None, alpha).unwrap().item().unwrap();

        // independent evaluation
        let sample = |y: usize, x: usize| -> Option<f64> {
            let s = x as f64 - dvals[y * w + x];
            if !(0.0..=(w - 1) as f64).contains(&s) {
                return None;
            }
            let x0 = (s.floor() as usize).min(w - 2);
            let t = s - x0 as f64;
            Some(right.at3(0, y, x0) * (1.0 - t) + right.at3(0, y, x0 + 1) * t)
        };
        let mut warped = vec![0.0; h * w];
        let mut inview = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                match sample(y, x) {
                    Some(v) => {
                        warped[y * w + x] = v;
                        inview[y * w + x] = true;
                    }
                    None => {
                        // clamped value, excluded from the mean
                        let s = (x as f64 - dvals[y * w + x]).clamp(0.0, (w - 1) as f64);
                        let x0 = (s.floor() as usize).min(w - 2);
                        let t = s - x0 as f64;
                        warped[y * w + x] = right.at3(0, y, x0) * (1.0 - t) + right.at3(0, y, x0 + 1) * t;
                    }
                }
            }
        }
        // scalar SSIM with 3x3 clamped windows
        let c1 = 1e-4;
        let c2 = 9e-4;
        let win = |v: &dyn Fn(usize, usize) -> f64, y: i64, x: i64| -> f64 {
            let mut acc = 0.0;
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let sy = (y + dy).clamp(0, h as i64 - 1) as usize;
                    let sx = (x + dx).clamp(0, w as i64 - 1) as usize;
                    acc += v(sy, sx);
                }
            }
            acc / 9.0
        };
        let lv = |y: usize, x: usize| left.at3(0, y, x);
        let wv = |y: usize, x: usize| warped[y * w + x];
        let mut total = 0.0;
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                if !inview[y * w + x] {
                    continue;
                }
                let ma = win(&lv, y as i64, x as i64);
                let mb = win(&wv, y as i64, x as i64);
                let maa = win(&|yy, xx| lv(yy, xx) * lv(yy, xx), y as i64, x as i64);
                let mbb = win(&|yy, xx| wv(yy, xx) * wv(yy, xx), y as i64, x as i64);
                let mab = win(&|yy, xx| lv(yy, xx) * wv(yy, xx), y as i64, x as i64);
                let va = maa - ma * ma;
                let vb = mbb - mb * mb;
                let cov = mab - ma * mb;
                let ssim = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                let term = alpha * (1.0 - ssim) / 2.0 + (1.0 - alpha) * (lv(y, x) - wv(y, x)).abs();
                total += term;
                count += 1;
            }
        }
        let expect = total / count as f64;
        assert!((loss - expect).abs() < 1e-10, "loss {loss} vs brute {expect}");
    }

    #[test]
    fn all_pixels_excluded_is_an_error() {
        let tape = Tape::<f64>::new();
        let img = rand_img(1, 4, 4, 9);
        let d = Tensor::<f64>::zeros(vec![4, 4]);
        let all = Tensor::<f64>::ones(vec![4, 4]);
        let r = photometric_loss(&tape, &img, &img, &d, Some(&all), 0.85);
        assert!(matches!(r, Err(Error::EmptyMask { .. })));
    }

    #[test]
    fn loss_is_nonnegative() {
        let tape = Tape::<f64>::new();
        for seed in 0..6 {
            let a = rand_img(3, 8, 8, 100 + seed);
            let b = rand_img(3, 8, 8, 200 + seed);
            let d = Tensor::full(vec![8, 8], 1.25);
            let l = photometric_loss(&tape, &a, &b, &d, None, 0.85).unwrap();
            assert!(l.item().unwrap() >= 0.0);
        }
    }

    #[test]
    fn warp_output_type_is_reexported() {
        // in_view mask participates in the loss; sanity-check its shape here
        let tape = Tape::<f64>::new();
        let img = rand_img(1, 4, 6, 3);
        let d = Tensor::full(vec![4, 6], 2.0);
        let WarpOutput { warped, in_view } = tape.warp_horizontal(&img, &d).unwrap();
        assert_eq!(warped.shape(), &[1, 4, 6]);
        assert_eq!(in_view.shape(), &[4, 6]);
    }
}
