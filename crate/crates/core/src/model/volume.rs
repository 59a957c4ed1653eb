//! Cost-volume assembly and the winner-take-all correlation diagnostic.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Matching-cost volume `[2 N_c + N_g, D, H, W]`: a concatenation block of
/// left and shifted right features followed by a group-wise correlation
/// block. `d_min`/`d_max` describe the hypothesis range; cascade refinement
/// stages use offset ranges centered on zero.
pub struct CostVolume<E: Elem> {
    pub values: Tensor<E>,
    pub d_min: i64,
    pub d_max: i64,
    pub stage: usize,
    pub feat_channels: usize,
    pub groups: usize,
}

impl<E: Elem> CostVolume<E> {
    pub fn hypothesis_count(&self) -> usize {
        (self.d_max - self.d_min) as usize
    }

    /// Channel count of the concatenation block (`2 N_c`).
    pub fn concat_channels(&self) -> usize {
        2 * self.feat_channels
    }

    /// Channel count of the group-wise correlation block (`N_g`).
    pub fn gwc_channels(&self) -> usize {
        self.groups
    }
}

/// Full-range volume over integer disparities `[d_min, d_max)` in feature
/// pixels.
pub fn build_cost_volume<E: Elem>(
    tape: &Tape<E>,
    fl: &Tensor<E>,
    fr: &Tensor<E>,
    d_min: usize,
    d_max: usize,
    groups: usize,
) -> Result<CostVolume<E>> {
    let values = tape.cost_volume(fl, fr, d_min, d_max, groups)?;
    Ok(CostVolume {
        values,
        d_min: d_min as i64,
        d_max: d_max as i64,
        stage: 0,
        feat_channels: fl.shape()[0],
        groups,
    })
}

/// Windowed volume around a per-pixel base disparity; hypothesis offsets run
/// over `[-radius, radius]`.
pub fn build_cost_volume_windowed<E: Elem>(
    tape: &Tape<E>,
    fl: &Tensor<E>,
    fr: &Tensor<E>,
    base: &Tensor<E>,
    radius: usize,
    groups: usize,
    stage: usize,
) -> Result<CostVolume<E>> {
    let values = tape.cost_volume_windowed(fl, fr, base, radius, groups)?;
    Ok(CostVolume {
        values,
        d_min: -(radius as i64),
        d_max: radius as i64 + 1,
        stage,
        feat_channels: fl.shape()[0],
        groups,
    })
}

/// Winner-take-all disparity from raw feature correlation: per pixel, the
/// argmax over `d` of the inner product of left and shifted right features.
/// Ties break toward smaller `d`; shifts that leave the image are skipped.
/// A non-differentiable diagnostic of feature quality.
pub fn wta_disparity<E: Elem>(fl: &Tensor<E>, fr: &Tensor<E>, d_max: usize) -> Result<Tensor<E>> {
    if fl.shape().len() != 3 || fl.shape() != fr.shape() {
        return Err(Error::shape(
            "wta_disparity",
            format!("left {:?} vs right {:?}", fl.shape(), fr.shape()),
        ));
    }
    let (c, h, w) = (fl.shape()[0], fl.shape()[1], fl.shape()[2]);
    if d_max == 0 || d_max > w {
        return Err(Error::arg("wta_disparity", format!("d_max {} for width {}", d_max, w)));
    }
    let lv = fl.values();
    let rv = fr.values();
    let plane = h * w;
    let mut out = vec![E::zero(); plane];
    for y in 0..h {
        for x in 0..w {
            let mut best_d = 0usize;
            let mut best = E::neg_infinity();
            for d in 0..d_max.min(x + 1) {
                let xr = x - d;
                let mut dot = E::zero();
                for ci in 0..c {
                    dot = dot + lv[ci * plane + y * w + x] * rv[ci * plane + y * w + xr];
                }
                if dot > best {
                    best = dot;
                    best_d = d;
                }
            }
            out[y * w + x] = E::from_usize(best_d).unwrap();
        }
    }
    Tensor::from_vec(vec![h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_features(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut state = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(13);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        Tensor::from_vec(vec![c, h, w], (0..c * h * w).map(|_| next()).collect()).unwrap()
    }

    fn normalize_pixels(f: &Tensor<f64>) -> Tensor<f64> {
        let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
        let mut out = f.values().to_vec();
        for px in 0..h * w {
            let norm: f64 = (0..c).map(|ci| out[ci * h * w + px].powi(2)).sum::<f64>().sqrt().max(1e-12);
            for ci in 0..c {
                out[ci * h * w + px] /= norm;
            }
        }
        Tensor::from_vec(vec![c, h, w], out).unwrap()
    }

    #[test]
    fn wta_of_identical_unit_features_is_zero() {
        // self-correlation of unit vectors is maximal at d = 0; ties break low
        let f = normalize_pixels(&rand_features(6, 4, 12, 1));
        let m = wta_disparity(&f, &f, 6).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wta_detects_shift() {
        let (c, h, w) = (8, 4, 24);
        let fl = normalize_pixels(&rand_features(c, h, w, 2));
        let shift = 4usize;
        let mut rv = vec![0.0; c * h * w];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if x + shift < w {
                        rv[ci * h * w + y * w + x] = fl.at3(ci, y, x + shift);
                    }
                }
            }
        }
        let fr = Tensor::from_vec(vec![c, h, w], rv).unwrap();
        let m = wta_disparity(&fl, &fr, 8).unwrap();
        for y in 0..h {
            for x in 8..w - shift {
                assert_eq!(m.at2(y, x), 4.0, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn wta_range_contract() {
        let fl = rand_features(4, 3, 16, 3);
        let fr = rand_features(4, 3, 16, 4);
        let m = wta_disparity(&fl, &fr, 5).unwrap();
        for &v in m.values() {
            assert!((0.0..5.0).contains(&v));
        }
    }

    #[test]
    fn volume_block_accessors() {
        let tape = Tape::<f64>::new();
        let fl = rand_features(8, 3, 10, 5);
        let fr = rand_features(8, 3, 10, 6);
        let v = build_cost_volume(&tape, &fl, &fr, 0, 4, 4).unwrap();
        assert_eq!(v.concat_channels(), 16);
        assert_eq!(v.gwc_channels(), 4);
        assert_eq!(v.hypothesis_count(), 4);
        assert_eq!(v.values.shape(), &[20, 4, 3, 10]);
    }
}
