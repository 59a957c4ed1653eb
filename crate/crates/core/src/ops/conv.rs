//! 2-D and 3-D convolutions and the 3x3 box filter used by SSIM.
//!
//! Direct kernels, rayon-parallel over a dimension whose output slabs are
//! task-owned (channels), so results are bitwise deterministic. Stride-1
//! paths run on contiguous row slices (axpy forward/input-gradient, dot
//! weight-gradient); the generic strided path is kept for completeness.

use rayon::prelude::*;

use super::kern::{axpy, dot};
use super::Rec;
use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

fn ceil_div(a: i64, b: i64) -> i64 {
    debug_assert!(b > 0);
    (a + b - 1).div_euclid(b)
}

/// Inclusive output range `[lo, hi]` such that `o*stride + k - pad` stays in
/// `[0, size)`. Empty when `lo > hi`.
fn valid_range(k: i64, pad: i64, stride: i64, in_size: i64, out_size: i64) -> (i64, i64) {
    let lo = ceil_div(pad - k, stride).max(0);
    let hi = ((in_size - 1 + pad - k).div_euclid(stride)).min(out_size - 1);
    (lo, hi)
}

#[derive(Clone, Copy)]
struct Conv2dDims {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

fn conv2d_forward<E: Elem>(input: &[E], weight: &[E], bias: &[E], d: &Conv2dDims) -> Vec<E> {
    let (cin, h, w, kh, kw, ho, wo) = (d.cin, d.h, d.w, d.kh, d.kw, d.ho, d.wo);
    let (s, p) = (d.stride as i64, d.pad as i64);
    let mut out = vec![E::zero(); d.cout * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(co, plane)| {
        for v in plane.iter_mut() {
            *v = bias[co];
        }
        for ci in 0..cin {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = weight[((co * cin + ci) * kh + ky) * kw + kx];
                    if wv == E::zero() {
                        continue;
                    }
                    let (oy_lo, oy_hi) = valid_range(ky as i64, p, s, h as i64, ho as i64);
                    let (ox_lo, ox_hi) = valid_range(kx as i64, p, s, w as i64, wo as i64);
                    if oy_lo > oy_hi || ox_lo > ox_hi {
                        continue;
                    }
                    if s == 1 {
                        let row_len = (ox_hi - ox_lo + 1) as usize;
                        let ix0 = (ox_lo + kx as i64 - p) as usize;
                        for oy in oy_lo..=oy_hi {
                            let iy = (oy + ky as i64 - p) as usize;
                            let dst = &mut plane[oy as usize * wo + ox_lo as usize..][..row_len];
                            let src = &in_plane[iy * w + ix0..][..row_len];
                            axpy(dst, src, wv);
                        }
                    } else {
                        for oy in oy_lo..=oy_hi {
                            let iy = (oy * s + ky as i64 - p) as usize;
                            let in_row = &in_plane[iy * w..(iy + 1) * w];
                            let out_row = &mut plane[oy as usize * wo..(oy as usize + 1) * wo];
                            for ox in ox_lo..=ox_hi {
                                let ix = (ox * s + kx as i64 - p) as usize;
                                out_row[ox as usize] = out_row[ox as usize] + wv * in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv2d_dweight<E: Elem>(g: &[E], input: &[E], d: &Conv2dDims) -> Vec<E> {
    let (cin, h, w, kh, kw, ho, wo) = (d.cin, d.h, d.w, d.kh, d.kw, d.ho, d.wo);
    let (s, p) = (d.stride as i64, d.pad as i64);
    let mut dw = vec![E::zero(); d.cout * cin * kh * kw];
    dw.par_chunks_mut(cin * kh * kw).enumerate().for_each(|(co, dwc)| {
        let gp = &g[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..cin {
            let ip = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let (oy_lo, oy_hi) = valid_range(ky as i64, p, s, h as i64, ho as i64);
                    let (ox_lo, ox_hi) = valid_range(kx as i64, p, s, w as i64, wo as i64);
                    let mut acc = E::zero();
                    if oy_lo <= oy_hi && ox_lo <= ox_hi {
                        if s == 1 {
                            let row_len = (ox_hi - ox_lo + 1) as usize;
                            let ix0 = (ox_lo + kx as i64 - p) as usize;
                            for oy in oy_lo..=oy_hi {
                                let iy = (oy + ky as i64 - p) as usize;
                                acc = acc
                                    + dot(
                                        &gp[oy as usize * wo + ox_lo as usize..][..row_len],
                                        &ip[iy * w + ix0..][..row_len],
                                    );
                            }
                        } else {
                            for oy in oy_lo..=oy_hi {
                                let iy = (oy * s + ky as i64 - p) as usize;
                                for ox in ox_lo..=ox_hi {
                                    let ix = (ox * s + kx as i64 - p) as usize;
                                    acc = acc + gp[oy as usize * wo + ox as usize] * ip[iy * w + ix];
                                }
                            }
                        }
                    }
                    dwc[(ci * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });
    dw
}

fn conv2d_dinput<E: Elem>(g: &[E], weight: &[E], d: &Conv2dDims) -> Vec<E> {
    let (cin, h, w, kh, kw, ho, wo, cout) = (d.cin, d.h, d.w, d.kh, d.kw, d.ho, d.wo, d.cout);
    let (s, p) = (d.stride as i64, d.pad as i64);
    let mut di = vec![E::zero(); cin * h * w];
    di.par_chunks_mut(h * w).enumerate().for_each(|(ci, dip)| {
        if s == 1 {
            for co in 0..cout {
                let gp = &g[co * ho * wo..(co + 1) * ho * wo];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = weight[((co * cin + ci) * kh + ky) * kw + kx];
                        if wv == E::zero() {
                            continue;
                        }
                        let (oy_lo, oy_hi) = valid_range(ky as i64, p, 1, h as i64, ho as i64);
                        let (ox_lo, ox_hi) = valid_range(kx as i64, p, 1, w as i64, wo as i64);
                        if oy_lo > oy_hi || ox_lo > ox_hi {
                            continue;
                        }
                        let row_len = (ox_hi - ox_lo + 1) as usize;
                        let ix0 = (ox_lo + kx as i64 - p) as usize;
                        for oy in oy_lo..=oy_hi {
                            let iy = (oy + ky as i64 - p) as usize;
                            let dst = &mut dip[iy * w + ix0..][..row_len];
                            let src = &gp[oy as usize * wo + ox_lo as usize..][..row_len];
                            axpy(dst, src, wv);
                        }
                    }
                }
            }
        } else {
            for iy in 0..h as i64 {
                for ky in 0..kh as i64 {
                    let t = iy + p - ky;
                    if t < 0 || t % s != 0 {
                        continue;
                    }
                    let oy = t / s;
                    if oy >= ho as i64 {
                        continue;
                    }
                    for ix in 0..w as i64 {
                        let mut acc = E::zero();
                        for kx in 0..kw as i64 {
                            let u = ix + p - kx;
                            if u < 0 || u % s != 0 {
                                continue;
                            }
                            let ox = u / s;
                            if ox >= wo as i64 {
                                continue;
                            }
                            for co in 0..cout {
                                acc = acc
                                    + g[(co * ho + oy as usize) * wo + ox as usize]
                                        * weight[((co * cin + ci) * kh + ky as usize) * kw + kx as usize];
                            }
                        }
                        dip[iy as usize * w + ix as usize] = dip[iy as usize * w + ix as usize] + acc;
                    }
                }
            }
        }
    });
    di
}

impl<E: Elem> Tape<E> {
    /// 2-D convolution: `input [Cin,H,W]` with `weight [Cout,Cin,kH,kW]` and
    /// `bias [Cout]`, zero padding `pad`, output `[Cout,H',W']` where
    /// `H' = (H + 2 pad - kH)/stride + 1` (must divide exactly).
    pub fn conv2d(
        &self,
        input: &Tensor<E>,
        weight: &Tensor<E>,
        bias: &Tensor<E>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<E>> {
        if input.shape().len() != 3 || weight.shape().len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?}, weight {:?}", input.shape(), weight.shape()),
            ));
        }
        let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (cout, wcin, kh, kw) =
            (weight.shape()[0], weight.shape()[1], weight.shape()[2], weight.shape()[3]);
        if wcin != cin {
            return Err(Error::shape("conv2d", format!("input channels {} vs weight {}", cin, wcin)));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape("conv2d", format!("bias {:?} vs Cout {}", bias.shape(), cout)));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::arg("conv2d", format!("kernel must be odd, got {}x{}", kh, kw)));
        }
        if stride < 1 {
            return Err(Error::arg("conv2d", "stride must be >= 1".to_string()));
        }
        let num_h = h as i64 + 2 * pad as i64 - kh as i64;
        let num_w = w as i64 + 2 * pad as i64 - kw as i64;
        if num_h < 0 || num_w < 0 || num_h % stride as i64 != 0 || num_w % stride as i64 != 0 {
            return Err(Error::arg(
                "conv2d",
                format!(
                    "non-integer output size for {}x{} k={}x{} stride={} pad={}",
                    h, w, kh, kw, stride, pad
                ),
            ));
        }
        let ho = (num_h / stride as i64 + 1) as usize;
        let wo = (num_w / stride as i64 + 1) as usize;
        let dims = Conv2dDims { cin, h, w, cout, kh, kw, ho, wo, stride, pad };
        let out = conv2d_forward(input.values(), weight.values(), bias.values(), &dims);

        let mut rec = Rec::new();
        let si = rec.input(self, input, "conv2d")?;
        let sw = rec.input(self, weight, "conv2d")?;
        let sb = rec.input(self, bias, "conv2d")?;
        let node = if rec.is_empty() {
            None
        } else {
            let n = rec.len();
            let iv = input.data_arc();
            let wv = weight.data_arc();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); n];
                if let Some(slot) = sb {
                    let mut db = vec![E::zero(); cout];
                    for (co, dbv) in db.iter_mut().enumerate() {
                        *dbv = g[co * ho * wo..(co + 1) * ho * wo].iter().copied().sum();
                    }
                    grads[slot] = db;
                }
                if let Some(slot) = sw {
                    grads[slot] = conv2d_dweight(g, &iv, &dims);
                }
                if let Some(slot) = si {
                    grads[slot] = conv2d_dinput(g, &wv, &dims);
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![cout, ho, wo], out, node))
    }

    /// 3-D convolution over `(D,H,W)` volumes, stride 1, zero padding `pad`:
    /// `input [Cin,D,H,W]`, `weight [Cout,Cin,kD,kH,kW]`, `bias [Cout]`.
    pub fn conv3d(
        &self,
        input: &Tensor<E>,
        weight: &Tensor<E>,
        bias: &Tensor<E>,
        pad: usize,
    ) -> Result<Tensor<E>> {
        if input.shape().len() != 4 || weight.shape().len() != 5 {
            return Err(Error::shape(
                "conv3d",
                format!("input {:?}, weight {:?}", input.shape(), weight.shape()),
            ));
        }
        let (cin, dd, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
        let (cout, wcin, kd, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
            weight.shape()[4],
        );
        if wcin != cin {
            return Err(Error::shape("conv3d", format!("input channels {} vs weight {}", cin, wcin)));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape("conv3d", format!("bias {:?} vs Cout {}", bias.shape(), cout)));
        }
        if kd % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::arg("conv3d", format!("kernel must be odd, got {}x{}x{}", kd, kh, kw)));
        }
        let od = dd as i64 + 2 * pad as i64 - kd as i64 + 1;
        let oh = h as i64 + 2 * pad as i64 - kh as i64 + 1;
        let ow = w as i64 + 2 * pad as i64 - kw as i64 + 1;
        if od < 1 || oh < 1 || ow < 1 {
            return Err(Error::arg("conv3d", "kernel larger than padded input".to_string()));
        }
        let (od, oh, ow) = (od as usize, oh as usize, ow as usize);
        let p = pad as i64;
        let iv = input.values();
        let wv = weight.values();
        let bv = bias.values();
        let mut out = vec![E::zero(); cout * od * oh * ow];
        out.par_chunks_mut(od * oh * ow).enumerate().for_each(|(co, vol)| {
            for v in vol.iter_mut() {
                *v = bv[co];
            }
            for ci in 0..cin {
                let ip = &iv[ci * dd * h * w..(ci + 1) * dd * h * w];
                for kz in 0..kd {
                    let (oz_lo, oz_hi) = valid_range(kz as i64, p, 1, dd as i64, od as i64);
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = valid_range(ky as i64, p, 1, h as i64, oh as i64);
                        for kx in 0..kw {
                            let weight_v = wv[(((co * cin + ci) * kd + kz) * kh + ky) * kw + kx];
                            if weight_v == E::zero() {
                                continue;
                            }
                            let (ox_lo, ox_hi) = valid_range(kx as i64, p, 1, w as i64, ow as i64);
                            if oz_lo > oz_hi || oy_lo > oy_hi || ox_lo > ox_hi {
                                continue;
                            }
                            let row_len = (ox_hi - ox_lo + 1) as usize;
                            let ix0 = (ox_lo + kx as i64 - p) as usize;
                            for oz in oz_lo..=oz_hi {
                                let iz = (oz + kz as i64 - p) as usize;
                                for oy in oy_lo..=oy_hi {
                                    let iy = (oy + ky as i64 - p) as usize;
                                    let dst =
                                        &mut vol[(oz as usize * oh + oy as usize) * ow + ox_lo as usize..][..row_len];
                                    let src = &ip[(iz * h + iy) * w + ix0..][..row_len];
                                    axpy(dst, src, weight_v);
                                }
                            }
                        }
                    }
                }
            }
        });

        let mut rec = Rec::new();
        let si = rec.input(self, input, "conv3d")?;
        let sw = rec.input(self, weight, "conv3d")?;
        let sb = rec.input(self, bias, "conv3d")?;
        let node = if rec.is_empty() {
            None
        } else {
            let n = rec.len();
            let iv = input.data_arc();
            let wv = weight.data_arc();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); n];
                if let Some(slot) = sb {
                    let mut db = vec![E::zero(); cout];
                    for (co, dbv) in db.iter_mut().enumerate() {
                        *dbv = g[co * od * oh * ow..(co + 1) * od * oh * ow].iter().copied().sum();
                    }
                    grads[slot] = db;
                }
                if let Some(slot) = sw {
                    let mut dw = vec![E::zero(); cout * cin * kd * kh * kw];
                    dw.par_chunks_mut(cin * kd * kh * kw).enumerate().for_each(|(co, dwc)| {
                        let gp = &g[co * od * oh * ow..(co + 1) * od * oh * ow];
                        for ci in 0..cin {
                            let ip = &iv[ci * dd * h * w..(ci + 1) * dd * h * w];
                            for kz in 0..kd {
                                let (oz_lo, oz_hi) = valid_range(kz as i64, p, 1, dd as i64, od as i64);
                                for ky in 0..kh {
                                    let (oy_lo, oy_hi) = valid_range(ky as i64, p, 1, h as i64, oh as i64);
                                    for kx in 0..kw {
                                        let (ox_lo, ox_hi) = valid_range(kx as i64, p, 1, w as i64, ow as i64);
                                        let mut acc = E::zero();
                                        if oz_lo <= oz_hi && oy_lo <= oy_hi && ox_lo <= ox_hi {
                                            let row_len = (ox_hi - ox_lo + 1) as usize;
                                            let ix0 = (ox_lo + kx as i64 - p) as usize;
                                            for oz in oz_lo..=oz_hi {
                                                let iz = (oz + kz as i64 - p) as usize;
                                                for oy in oy_lo..=oy_hi {
                                                    let iy = (oy + ky as i64 - p) as usize;
                                                    acc = acc
                                                        + dot(
                                                            &gp[(oz as usize * oh + oy as usize) * ow
                                                                + ox_lo as usize..][..row_len],
                                                            &ip[(iz * h + iy) * w + ix0..][..row_len],
                                                        );
                                                }
                                            }
                                        }
                                        dwc[((ci * kd + kz) * kh + ky) * kw + kx] = acc;
                                    }
                                }
                            }
                        }
                    });
                    grads[slot] = dw;
                }
                if let Some(slot) = si {
                    let mut di = vec![E::zero(); cin * dd * h * w];
                    di.par_chunks_mut(dd * h * w).enumerate().for_each(|(ci, dip)| {
                        for co in 0..cout {
                            let gp = &g[co * od * oh * ow..(co + 1) * od * oh * ow];
                            for kz in 0..kd {
                                let (oz_lo, oz_hi) = valid_range(kz as i64, p, 1, dd as i64, od as i64);
                                for ky in 0..kh {
                                    let (oy_lo, oy_hi) = valid_range(ky as i64, p, 1, h as i64, oh as i64);
                                    for kx in 0..kw {
                                        let wvv = wv[(((co * cin + ci) * kd + kz) * kh + ky) * kw + kx];
                                        if wvv == E::zero() {
                                            continue;
                                        }
                                        let (ox_lo, ox_hi) = valid_range(kx as i64, p, 1, w as i64, ow as i64);
                                        if oz_lo > oz_hi || oy_lo > oy_hi || ox_lo > ox_hi {
                                            continue;
                                        }
                                        let row_len = (ox_hi - ox_lo + 1) as usize;
                                        let ix0 = (ox_lo + kx as i64 - p) as usize;
                                        for oz in oz_lo..=oz_hi {
                                            let iz = (oz + kz as i64 - p) as usize;
                                            for oy in oy_lo..=oy_hi {
                                                let iy = (oy + ky as i64 - p) as usize;
                                                let dst = &mut dip[(iz * h + iy) * w + ix0..][..row_len];
                                                let src = &gp[(oz as usize * oh + oy as usize) * ow
                                                    + ox_lo as usize..][..row_len];
                                                axpy(dst, src, wvv);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                    grads[slot] = di;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![cout, od, oh, ow], out, node))
    }

    /// 3x3 uniform box filter over `[C,H,W]` with clamp-to-edge sampling.
    pub fn box_filter3(&self, a: &Tensor<E>) -> Result<Tensor<E>> {
        if a.shape().len() != 3 {
            return Err(Error::shape("box_filter3", format!("expected [C,H,W], got {:?}", a.shape())));
        }
        let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let ninth = lit::<E>(1.0 / 9.0);
        let av = a.values();
        let mut out = vec![E::zero(); c * h * w];
        out.par_chunks_mut(h * w).enumerate().for_each(|(ci, plane)| {
            let ip = &av[ci * h * w..(ci + 1) * h * w];
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let mut acc = E::zero();
                    for dy in -1..=1i64 {
                        let sy = (y + dy).clamp(0, h as i64 - 1) as usize;
                        for dx in -1..=1i64 {
                            let sx = (x + dx).clamp(0, w as i64 - 1) as usize;
                            acc = acc + ip[sy * w + sx];
                        }
                    }
                    plane[(y as usize) * w + x as usize] = acc * ninth;
                }
            }
        });
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "box_filter3")?;
        let node = if rec.is_empty() {
            None
        } else {
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    let mut da = vec![E::zero(); c * h * w];
                    da.par_chunks_mut(h * w).enumerate().for_each(|(ci, dap)| {
                        let gp = &g[ci * h * w..(ci + 1) * h * w];
                        for y in 0..h as i64 {
                            for x in 0..w as i64 {
                                let gv = gp[(y as usize) * w + x as usize] * ninth;
                                for dy in -1..=1i64 {
                                    let sy = (y + dy).clamp(0, h as i64 - 1) as usize;
                                    for dx in -1..=1i64 {
                                        let sx = (x + dx).clamp(0, w as i64 - 1) as usize;
                                        dap[sy * w + sx] = dap[sy * w + sx] + gv;
                                    }
                                }
                            }
                        }
                    });
                    grads[0] = da;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![c, h, w], out, node))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn identity_kernel_reproduces_input() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let y = tape.conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn ones_kernel_counts_neighbors() {
        // all-ones 3x3 input, all-ones 3x3 kernel, pad 1:
        // center sees 9 taps, corners see 4.
        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 3, 3], vec![1.0; 9]).unwrap();
        let w = Tensor::from_vec(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let y = tape.conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.values()[4], 9.0);
        assert_eq!(y.values()[0], 4.0);
        assert_eq!(y.values()[2], 4.0);
        assert_eq!(y.values()[6], 4.0);
        assert_eq!(y.values()[8], 4.0);
    }

    #[test]
    fn strided_conv_matches_dense_subsampling() {
        // stride-2 output equals the stride-1 output sampled at even steps
        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![2, 7, 9], (0..126).map(|v| (v % 13) as f64 * 0.21).collect()).unwrap();
        let w = Tensor::from_vec(vec![3, 2, 3, 3], (0..54).map(|v| (v % 7) as f64 * 0.1 - 0.3).collect()).unwrap();
        let b = Tensor::from_vec(vec![3], vec![0.1, -0.2, 0.0]).unwrap();
        let dense = tape.conv2d(&x, &w, &b, 1, 1).unwrap();
        let strided = tape.conv2d(&x, &w, &b, 2, 1).unwrap();
        assert_eq!(strided.shape(), &[3, 4, 5]);
        for co in 0..3 {
            for y in 0..4 {
                for x2 in 0..5 {
                    let a = strided.at3(co, y, x2);
                    let bval = dense.at3(co, 2 * y, 2 * x2);
                    assert!((a - bval).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_integer_output_rejected() {
        let tape = Tape::<f64>::new();
        let x = Tensor::<f64>::zeros(vec![1, 4, 4]);
        let w = Tensor::<f64>::zeros(vec![1, 1, 3, 3]);
        let b = Tensor::<f64>::zeros(vec![1]);
        // (4 - 3) = 1 not divisible by stride 2
        assert!(tape.conv2d(&x, &w, &b, 2, 0).is_err());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let tape = Tape::<f64>::new();
        let x = Tensor::<f64>::zeros(vec![2, 4, 4]);
        let w = Tensor::<f64>::zeros(vec![1, 3, 3, 3]);
        let b = Tensor::<f64>::zeros(vec![1]);
        assert!(tape.conv2d(&x, &w, &b, 1, 1).is_err());
    }

    #[test]
    fn box_filter_constant_invariant() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 4, 5], vec![0.3; 20]).unwrap();
        let y = tape.box_filter3(&x).unwrap();
        for &v in y.values() {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3d_shapes_and_zero_weights() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![2, 3, 4, 5], (0..120).map(|v| v as f64 * 0.1).collect()).unwrap();
        let w = Tensor::<f64>::zeros(vec![1, 2, 3, 3, 3]);
        let b = Tensor::from_vec(vec![1], vec![0.25]).unwrap();
        let y = tape.conv3d(&x, &w, &b, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 5]);
        assert!(y.values().iter().all(|&v| v == 0.25));
    }
}
