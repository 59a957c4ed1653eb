//! Probability volumes and soft-argmax disparity regression.

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Per-pixel disparity distribution `[D, H, W]`; slices over `D` sum to 1.
pub struct ProbabilityVolume<E: Elem> {
    pub values: Tensor<E>,
    pub d_min: i64,
    pub d_max: i64,
}

impl<E: Elem> ProbabilityVolume<E> {
    /// Max deviation of any pixel's mass from 1.
    pub fn normalization_error(&self) -> f64 {
        let shape = self.values.shape();
        let (d, h, w) = (shape[0], shape[1], shape[2]);
        let v = self.values.values();
        let mut worst = 0.0f64;
        for px in 0..h * w {
            let mut s = 0.0f64;
            for j in 0..d {
                s += v[j * h * w + px].to_f64().unwrap();
            }
            worst = worst.max((s - 1.0).abs());
        }
        worst
    }
}

/// Disparity map at a stated scale: values are in units of the map's own
/// grid, so one unit equals `stride` full-resolution pixels.
pub struct DisparityMap<E: Elem> {
    pub values: Tensor<E>,
    pub stride: usize,
}

/// Expected disparity under the distribution: `sum_d d * p(d)` over
/// `[d_min, d_max)`. Output lies in `[d_min, d_max - 1]`.
pub fn regress_disparity<E: Elem>(tape: &Tape<E>, p: &ProbabilityVolume<E>) -> Result<Tensor<E>> {
    let shape = p.values.shape();
    if shape.len() != 3 {
        return Err(Error::shape("regress_disparity", format!("expected [D,H,W], got {:?}", shape)));
    }
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    if (p.d_max - p.d_min) as usize != d {
        return Err(Error::shape(
            "regress_disparity",
            format!("range [{}, {}) vs {} slices", p.d_min, p.d_max, d),
        ));
    }
    let weights: Vec<E> = (0..d).map(|j| lit::<E>((p.d_min + j as i64) as f64)).collect();
    let wrow = Tensor::from_vec(vec![1, d], weights)?;
    let flat = tape.reshape(&p.values, vec![d, h * w])?;
    let mixed = tape.matmul(&wrow, &flat)?;
    tape.reshape(&mixed, vec![h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(d: usize, h: usize, w: usize, data: Vec<f64>, d_min: i64) -> ProbabilityVolume<f64> {
        ProbabilityVolume {
            values: Tensor::from_vec(vec![d, h, w], data).unwrap(),
            d_min,
            d_max: d_min + d as i64,
        }
    }

    #[test]
    fn unit_mass_returns_its_bin() {
        let mut data = vec![0.0; 8];
        data[5] = 1.0; // all mass at d = 5 for the single pixel
        let p = prob(8, 1, 1, data, 0);
        let tape = Tape::<f64>::new();
        let m = regress_disparity(&tape, &p).unwrap();
        assert_eq!(m.values(), &[5.0]);
    }

    #[test]
    fn uniform_over_four_gives_mean() {
        let p = prob(4, 1, 1, vec![0.25; 4], 0);
        let tape = Tape::<f64>::new();
        let m = regress_disparity(&tape, &p).unwrap();
        assert!((m.values()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn random_distributions_match_brute_force() {
        let (d, h, w) = (6, 3, 4);
        let mut state = 99u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut data = vec![0.0f64; d * h * w];
        for px in 0..h * w {
            let raw: Vec<f64> = (0..d).map(|_| next() + 0.01).collect();
            let s: f64 = raw.iter().sum();
            for j in 0..d {
                data[j * h * w + px] = raw[j] / s;
            }
        }
        let p = prob(d, h, w, data.clone(), -2);
        let tape = Tape::<f64>::new();
        let m = regress_disparity(&tape, &p).unwrap();
        for px in 0..h * w {
            let expect: f64 = (0..d).map(|j| (j as i64 - 2) as f64 * data[j * h * w + px]).sum();
            assert!((m.values()[px] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn output_is_convex_combination_of_range() {
        let p = prob(4, 1, 2, vec![0.1, 0.7, 0.2, 0.1, 0.3, 0.1, 0.4, 0.1], 0);
        let tape = Tape::<f64>::new();
        let m = regress_disparity(&tape, &p).unwrap();
        for &v in m.values() {
            assert!((0.0..=3.0).contains(&v));
        }
    }
}
