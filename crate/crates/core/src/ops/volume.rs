//! Cost-volume primitives: concatenation + group-wise correlation between a
//! left feature map and a horizontally shifted right feature map.
//!
//! Channel layout of a volume built from `C`-channel features with `G`
//! groups: `[0,C)` left copy, `[C,2C)` shifted right, `[2C,2C+G)` group-wise
//! correlation scaled by `G/C` (one over group size). Out-of-range shifts are
//! zero-filled.

use rayon::prelude::*;

use super::Rec;
use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

fn check_features<E: Elem>(
    op: &'static str,
    fl: &Tensor<E>,
    fr: &Tensor<E>,
    groups: usize,
) -> Result<(usize, usize, usize)> {
    if fl.shape().len() != 3 || fl.shape() != fr.shape() {
        return Err(Error::shape(op, format!("left {:?} vs right {:?}", fl.shape(), fr.shape())));
    }
    let (c, h, w) = (fl.shape()[0], fl.shape()[1], fl.shape()[2]);
    if groups == 0 || c % groups != 0 {
        return Err(Error::arg(op, format!("channels {} not divisible by {} groups", c, groups)));
    }
    Ok((c, h, w))
}

impl<E: Elem> Tape<E> {
    /// Full-range cost volume over integer disparities `d in [d_min, d_max)`.
    /// Output `[2C+G, D, H, W]` with `D = d_max - d_min`.
    pub fn cost_volume(
        &self,
        fl: &Tensor<E>,
        fr: &Tensor<E>,
        d_min: usize,
        d_max: usize,
        groups: usize,
    ) -> Result<Tensor<E>> {
        let (c, h, w) = check_features("cost_volume", fl, fr, groups)?;
        if d_min >= d_max {
            return Err(Error::arg("cost_volume", format!("empty range [{d_min},{d_max})")));
        }
        if d_max > w {
            return Err(Error::arg("cost_volume", format!("d_max {} exceeds width {}", d_max, w)));
        }
        let d = d_max - d_min;
        let gs = c / groups;
        let scale = lit::<E>(groups as f64 / c as f64);
        let lv = fl.values();
        let rv = fr.values();
        let cvol = 2 * c + groups;
        let plane = h * w;
        let mut out = vec![E::zero(); cvol * d * plane];
        // Left copy: channel f repeats F_l over every disparity slot.
        out[..c * d * plane].par_chunks_mut(d * plane).enumerate().for_each(|(ci, slab)| {
            for j in 0..d {
                slab[j * plane..(j + 1) * plane].copy_from_slice(&lv[ci * plane..(ci + 1) * plane]);
            }
        });
        // Shifted right copy.
        out[c * d * plane..2 * c * d * plane]
            .par_chunks_mut(d * plane)
            .enumerate()
            .for_each(|(ci, slab)| {
                for j in 0..d {
                    let disp = d_min + j;
                    for y in 0..h {
                        for x in disp..w {
                            slab[j * plane + y * w + x] = rv[ci * plane + y * w + (x - disp)];
                        }
                    }
                }
            });
        // Group-wise correlation.
        out[2 * c * d * plane..]
            .par_chunks_mut(d * plane)
            .enumerate()
            .for_each(|(gi, slab)| {
                for j in 0..d {
                    let disp = d_min + j;
                    for y in 0..h {
                        for x in disp..w {
                            let mut acc = E::zero();
                            for cc in gi * gs..(gi + 1) * gs {
                                acc = acc + lv[cc * plane + y * w + x] * rv[cc * plane + y * w + (x - disp)];
                            }
                            slab[j * plane + y * w + x] = acc * scale;
                        }
                    }
                }
            });

        let mut rec = Rec::new();
        let sl = rec.input(self, fl, "cost_volume")?;
        let sr = rec.input(self, fr, "cost_volume")?;
        let node = if rec.is_empty() {
            None
        } else {
            let n = rec.len();
            let lv = fl.data_arc();
            let rv = fr.data_arc();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); n];
                let vol_off = |ch: usize, j: usize| (ch * d + j) * plane;
                if let Some(slot) = sl {
                    let mut dl = vec![E::zero(); c * plane];
                    dl.par_chunks_mut(plane).enumerate().for_each(|(ci, dlp)| {
                        let gi = ci / gs;
                        for y in 0..h {
                            for x in 0..w {
                                let mut acc = E::zero();
                                for j in 0..d {
                                    let disp = d_min + j;
                                    // left copy
                                    acc = acc + g[vol_off(ci, j) + y * w + x];
                                    // gwc: left side of the product
                                    if x >= disp {
                                        acc = acc
                                            + g[vol_off(2 * c + gi, j) + y * w + x]
                                                * rv[ci * plane + y * w + (x - disp)]
                                                * scale;
                                    }
                                }
                                dlp[y * w + x] = acc;
                            }
                        }
                    });
                    grads[slot] = dl;
                }
                if let Some(slot) = sr {
                    let mut dr = vec![E::zero(); c * plane];
                    dr.par_chunks_mut(plane).enumerate().for_each(|(ci, drp)| {
                        let gi = ci / gs;
                        for y in 0..h {
                            for xr in 0..w {
                                let mut acc = E::zero();
                                for j in 0..d {
                                    let disp = d_min + j;
                                    let x = xr + disp;
                                    if x >= w {
                                        break;
                                    }
                                    acc = acc + g[vol_off(c + ci, j) + y * w + x];
                                    acc = acc
                                        + g[vol_off(2 * c + gi, j) + y * w + x]
                                            * lv[ci * plane + y * w + x]
                                            * scale;
                                }
                                drp[y * w + xr] = acc;
                            }
                        }
                    });
                    grads[slot] = dr;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![cvol, d, h, w], out, node))
    }

    /// Windowed cost volume for cascade refinement: disparity hypothesis at
    /// slot `j` is `base(y,x) + j - radius`, sampled with linear
    /// interpolation. Output `[2C+G, 2 radius + 1, H, W]`. Differentiable in
    /// both feature maps and in `base`.
    pub fn cost_volume_windowed(
        &self,
        fl: &Tensor<E>,
        fr: &Tensor<E>,
        base: &Tensor<E>,
        radius: usize,
        groups: usize,
    ) -> Result<Tensor<E>> {
        let (c, h, w) = check_features("cost_volume_windowed", fl, fr, groups)?;
        if base.shape() != [h, w] {
            return Err(Error::shape(
                "cost_volume_windowed",
                format!("base {:?} vs feature plane {}x{}", base.shape(), h, w),
            ));
        }
        if !base.all_finite() {
            return Err(Error::NonFinite { op: "cost_volume_windowed", detail: "base disparity".to_string() });
        }
        let d = 2 * radius + 1;
        let gs = c / groups;
        let scale = lit::<E>(groups as f64 / c as f64);
        let plane = h * w;
        let lv = fl.values();
        let rv = fr.values();
        let bv = base.values();

        // Sampling plan per (j, y, x): base column, fraction, in-range flag.
        let mut x0s = vec![0usize; d * plane];
        let mut ts = vec![E::zero(); d * plane];
        let mut ok = vec![false; d * plane];
        for j in 0..d {
            let off = j as f64 - radius as f64;
            for y in 0..h {
                for x in 0..w {
                    let s = x as f64 - (bv[y * w + x].to_f64().unwrap() + off);
                    let idx = j * plane + y * w + x;
                    if s >= 0.0 && s <= (w - 1) as f64 && w >= 2 {
                        let x0 = (s.floor() as usize).min(w - 2);
                        x0s[idx] = x0;
                        ts[idx] = lit::<E>(s - x0 as f64);
                        ok[idx] = true;
                    }
                }
            }
        }

        let cvol = 2 * c + groups;
        let mut out = vec![E::zero(); cvol * d * plane];
        out[..c * d * plane].par_chunks_mut(d * plane).enumerate().for_each(|(ci, slab)| {
            for j in 0..d {
                slab[j * plane..(j + 1) * plane].copy_from_slice(&lv[ci * plane..(ci + 1) * plane]);
            }
        });
        out[c * d * plane..2 * c * d * plane]
            .par_chunks_mut(d * plane)
            .enumerate()
            .for_each(|(ci, slab)| {
                let rp = &rv[ci * plane..(ci + 1) * plane];
                for (idx, slot) in slab.iter_mut().enumerate() {
                    if ok[idx] {
                        let pix = idx % plane;
                        let y = pix / w;
                        let x0 = x0s[idx];
                        let t = ts[idx];
                        *slot = rp[y * w + x0] * (E::one() - t) + rp[y * w + x0 + 1] * t;
                    }
                }
            });
        out[2 * c * d * plane..]
            .par_chunks_mut(d * plane)
            .enumerate()
            .for_each(|(gi, slab)| {
                for (idx, slot) in slab.iter_mut().enumerate() {
                    if !ok[idx] {
                        continue;
                    }
                    let pix = idx % plane;
                    let y = pix / w;
                    let x = pix % w;
                    let x0 = x0s[idx];
                    let t = ts[idx];
                    let mut acc = E::zero();
                    for cc in gi * gs..(gi + 1) * gs {
                        let rp = &rv[cc * plane..(cc + 1) * plane];
                        let rs = rp[y * w + x0] * (E::one() - t) + rp[y * w + x0 + 1] * t;
                        acc = acc + lv[cc * plane + y * w + x] * rs;
                    }
                    *slot = acc * scale;
                }
            });

        let mut rec = Rec::new();
        let sl = rec.input(self, fl, "cost_volume_windowed")?;
        let sr = rec.input(self, fr, "cost_volume_windowed")?;
        let sb = rec.input(self, base, "cost_volume_windowed")?;
        let node = if rec.is_empty() {
            None
        } else {
            let n = rec.len();
            let lv = fl.data_arc();
            let rv = fr.data_arc();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); n];
                let vol_off = |ch: usize, j: usize| (ch * d + j) * plane;
                if let Some(slot) = sl {
                    let mut dl = vec![E::zero(); c * plane];
                    dl.par_chunks_mut(plane).enumerate().for_each(|(ci, dlp)| {
                        let gi = ci / gs;
                        let rp = &rv[ci * plane..(ci + 1) * plane];
                        for y in 0..h {
                            for x in 0..w {
                                let mut acc = E::zero();
                                for j in 0..d {
                                    let idx = j * plane + y * w + x;
                                    acc = acc + g[vol_off(ci, j) + y * w + x];
                                    if ok[idx] {
                                        let x0 = x0s[idx];
                                        let t = ts[idx];
                                        let rs = rp[y * w + x0] * (E::one() - t) + rp[y * w + x0 + 1] * t;
                                        acc = acc + g[vol_off(2 * c + gi, j) + y * w + x] * rs * scale;
                                    }
                                }
                                dlp[y * w + x] = acc;
                            }
                        }
                    });
                    grads[slot] = dl;
                }
                if let Some(slot) = sr {
                    // Scatter through the interpolation weights; each channel
                    // slab is owned by one task.
                    let mut dr = vec![E::zero(); c * plane];
                    dr.par_chunks_mut(plane).enumerate().for_each(|(ci, drp)| {
                        let gi = ci / gs;
                        let lp = &lv[ci * plane..(ci + 1) * plane];
                        for j in 0..d {
                            for y in 0..h {
                                for x in 0..w {
                                    let idx = j * plane + y * w + x;
                                    if !ok[idx] {
                                        continue;
                                    }
                                    let x0 = x0s[idx];
                                    let t = ts[idx];
                                    let gcat = g[vol_off(c + ci, j) + y * w + x];
                                    let ggwc = g[vol_off(2 * c + gi, j) + y * w + x] * lp[y * w + x] * scale;
                                    let gv = gcat + ggwc;
                                    drp[y * w + x0] = drp[y * w + x0] + gv * (E::one() - t);
                                    drp[y * w + x0 + 1] = drp[y * w + x0 + 1] + gv * t;
                                }
                            }
                        }
                    });
                    grads[slot] = dr;
                }
                if let Some(slot) = sb {
                    let mut db = vec![E::zero(); plane];
                    db.par_chunks_mut(w).enumerate().for_each(|(y, dbrow)| {
                        for x in 0..w {
                            let mut acc = E::zero();
                            for j in 0..d {
                                let idx = j * plane + y * w + x;
                                if !ok[idx] {
                                    continue;
                                }
                                let x0 = x0s[idx];
                                for ci in 0..c {
                                    let rp = &rv[ci * plane..(ci + 1) * plane];
                                    let slope = rp[y * w + x0 + 1] - rp[y * w + x0];
                                    // d(sample)/d(base) = -slope
                                    let gi = ci / gs;
                                    let gcat = g[vol_off(c + ci, j) + y * w + x];
                                    let ggwc =
                                        g[vol_off(2 * c + gi, j) + y * w + x] * lv[ci * plane + y * w + x] * scale;
                                    acc = acc - (gcat + ggwc) * slope;
                                }
                            }
                            dbrow[x] = acc;
                        }
                    });
                    grads[slot] = db;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![cvol, d, h, w], out, node))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    fn rand_features(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let data: Vec<f64> = (0..c * h * w).map(|_| next()).collect();
        Tensor::from_vec(vec![c, h, w], data).unwrap()
    }

    #[test]
    fn channel_blocks_have_contract_sizes() {
        let tape = Tape::<f64>::new();
        let fl = rand_features(8, 3, 6, 1);
        let fr = rand_features(8, 3, 6, 2);
        let v = tape.cost_volume(&fl, &fr, 0, 4, 4).unwrap();
        // concat block 2*C = 16 channels, gwc block = 4 groups
        assert_eq!(v.shape(), &[20, 4, 3, 6]);
    }

    #[test]
    fn self_correlation_at_zero_disparity() {
        // F_r = F_l, d = 0: gwc channel equals per-group mean of squared
        // features.
        let tape = Tape::<f64>::new();
        let fl = rand_features(4, 2, 3, 3);
        let v = tape.cost_volume(&fl, &fl, 0, 1, 2).unwrap();
        let (c, h, w) = (4, 2, 3);
        let gs = 2;
        for gi in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let expect: f64 = (gi * gs..(gi + 1) * gs)
                        .map(|cc| fl.at3(cc, y, x).powi(2))
                        .sum::<f64>()
                        / gs as f64;
                    let got = v.values()[((2 * c + gi) * 1) * h * w + y * w + x];
                    assert!((got - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shifted_features_peak_at_true_shift() {
        // F_r equal to F_l shifted by 3: argmax over d of summed gwc
        // channels is 3 on interior pixels.
        let tape = Tape::<f64>::new();
        let (c, h, w) = (8, 4, 16);
        let fl = {
            let raw = rand_features(c, h, w, 7);
            let mut out = raw.values().to_vec();
            for px in 0..h * w {
                let norm: f64 =
                    (0..c).map(|ci| out[ci * h * w + px].powi(2)).sum::<f64>().sqrt().max(1e-12);
                for ci in 0..c {
                    out[ci * h * w + px] /= norm;
                }
            }
            Tensor::from_vec(vec![c, h, w], out).unwrap()
        };
        let shift = 3usize;
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
        let groups = 4;
        let dmax = 8;
        let v = tape.cost_volume(&fl, &fr, 0, dmax, groups).unwrap();
        for y in 0..h {
            for x in shift + dmax..w - shift {
                let mut best = (f64::NEG_INFINITY, 0);
                for j in 0..dmax {
                    let mut s = 0.0;
                    for gi in 0..groups {
                        s += v.values()[((2 * c + gi) * dmax + j) * h * w + y * w + x];
                    }
                    if s > best.0 {
                        best = (s, j);
                    }
                }
                assert_eq!(best.1, shift, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn divisibility_violation_rejected() {
        let tape = Tape::<f64>::new();
        let fl = rand_features(6, 2, 4, 1);
        let fr = rand_features(6, 2, 4, 2);
        assert!(tape.cost_volume(&fl, &fr, 0, 2, 4).is_err());
    }

    #[test]
    fn windowed_with_zero_base_matches_integer_volume_on_overlap() {
        let tape = Tape::<f64>::new();
        let fl = rand_features(4, 3, 8, 11);
        let fr = rand_features(4, 3, 8, 12);
        let radius = 2;
        let base = Tensor::full(vec![3, 8], 2.0);
        let vw = tape.cost_volume_windowed(&fl, &fr, &base, radius, 2).unwrap();
        let vi = tape.cost_volume(&fl, &fr, 0, 5, 2).unwrap();
        // slot j of the windowed volume = disparity 2 + j - 2 = j
        assert_eq!(vw.shape(), vi.shape());
        for (a, b) in vw.values().iter().zip(vi.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
