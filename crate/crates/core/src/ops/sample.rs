//! Sampling ops: bilinear resize, horizontal disparity warping, and pixel
//! gathering for the contrastive losses.

use rayon::prelude::*;

use super::Rec;
use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Source coordinate for align-corners-false interpolation, clamped to the
/// valid range, split into base index and fractional weight.
fn src_coord(dst: usize, src_size: usize, dst_size: usize) -> (usize, f64) {
    if src_size == 1 {
        return (0, 0.0);
    }
    let scale = src_size as f64 / dst_size as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, src_size as f64 - 1.0);
    let base = (s.floor() as usize).min(src_size - 2);
    (base, s - base as f64)
}

/// Result of [`Tape::warp_horizontal`]: the reconstructed image plus the
/// in-view mask (1 where the sample coordinate stayed inside the image).
pub struct WarpOutput<E: Elem> {
    pub warped: Tensor<E>,
    pub in_view: Tensor<E>,
}

impl<E: Elem> Tape<E> {
    /// Bilinear resize of `[C,H,W]` to `[C,H',W']` with the
    /// align-corners-false convention.
    pub fn bilinear_resize(&self, a: &Tensor<E>, oh: usize, ow: usize) -> Result<Tensor<E>> {
        if a.shape().len() != 3 {
            return Err(Error::shape("bilinear_resize", format!("expected [C,H,W], got {:?}", a.shape())));
        }
        if oh < 1 || ow < 1 {
            return Err(Error::arg("bilinear_resize", format!("target {}x{}", oh, ow)));
        }
        let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        // Precompute per-axis interpolation tables; weights do not depend on
        // values, so the op is linear in the input.
        let ys: Vec<(usize, E)> = (0..oh)
            .map(|y| {
                let (b, t) = src_coord(y, h, oh);
                (b, lit::<E>(t))
            })
            .collect();
        let xs: Vec<(usize, E)> = (0..ow)
            .map(|x| {
                let (b, t) = src_coord(x, w, ow);
                (b, lit::<E>(t))
            })
            .collect();
        let av = a.values();
        let mut out = vec![E::zero(); c * oh * ow];
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(ci, plane)| {
            let ip = &av[ci * h * w..(ci + 1) * h * w];
            for (y, &(y0, ty)) in ys.iter().enumerate() {
                let y1 = (y0 + 1).min(h - 1);
                for (x, &(x0, tx)) in xs.iter().enumerate() {
                    let x1 = (x0 + 1).min(w - 1);
                    let a00 = ip[y0 * w + x0];
                    let a01 = ip[y0 * w + x1];
                    let a10 = ip[y1 * w + x0];
                    let a11 = ip[y1 * w + x1];
                    let top = a00 + (a01 - a00) * tx;
                    let bot = a10 + (a11 - a10) * tx;
                    plane[y * ow + x] = top + (bot - top) * ty;
                }
            }
        });
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "bilinear_resize")?;
        let node = if rec.is_empty() {
            None
        } else {
            let ys = ys.clone();
            let xs = xs.clone();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    let mut da = vec![E::zero(); c * h * w];
                    da.par_chunks_mut(h * w).enumerate().for_each(|(ci, dap)| {
                        let gp = &g[ci * oh * ow..(ci + 1) * oh * ow];
                        for (y, &(y0, ty)) in ys.iter().enumerate() {
                            let y1 = (y0 + 1).min(h - 1);
                            for (x, &(x0, tx)) in xs.iter().enumerate() {
                                let x1 = (x0 + 1).min(w - 1);
                                let gv = gp[y * ow + x];
                                let one = E::one();
                                dap[y0 * w + x0] = dap[y0 * w + x0] + gv * (one - ty) * (one - tx);
                                dap[y0 * w + x1] = dap[y0 * w + x1] + gv * (one - ty) * tx;
                                dap[y1 * w + x0] = dap[y1 * w + x0] + gv * ty * (one - tx);
                                dap[y1 * w + x1] = dap[y1 * w + x1] + gv * ty * tx;
                            }
                        }
                    });
                    grads[0] = da;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![c, oh, ow], out, node))
    }

    /// Reconstruct a left-view image by sampling `image` (the right view) at
    /// `x - d(x,y)` with linear interpolation along x.
    ///
    /// Out-of-view coordinates are clamped for the value, flagged with
    /// `in_view = 0`, and contribute no disparity gradient. Differentiable in
    /// both the image and the disparity at in-view samples.
    pub fn warp_horizontal(&self, image: &Tensor<E>, disparity: &Tensor<E>) -> Result<WarpOutput<E>> {
        if image.shape().len() != 3 || disparity.shape().len() != 2 {
            return Err(Error::shape(
                "warp_horizontal",
                format!("image {:?}, disparity {:?}", image.shape(), disparity.shape()),
            ));
        }
        let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
        if disparity.shape() != [h, w] {
            return Err(Error::shape(
                "warp_horizontal",
                format!("disparity {:?} vs image plane {}x{}", disparity.shape(), h, w),
            ));
        }
        if !disparity.all_finite() {
            return Err(Error::NonFinite { op: "warp_horizontal", detail: "disparity".to_string() });
        }
        let iv = image.values();
        let dv = disparity.values();
        // Per-pixel sampling plan shared by forward and backward.
        let mut x0s = vec![0usize; h * w];
        let mut ts = vec![E::zero(); h * w];
        let mut vis = vec![E::zero(); h * w];
        for y in 0..h {
            for x in 0..w {
                let s = x as f64 - dv[y * w + x].to_f64().unwrap();
                let in_view = s >= 0.0 && s <= (w - 1) as f64;
                let sc = s.clamp(0.0, (w - 1) as f64);
                let x0 = if w == 1 { 0 } else { (sc.floor() as usize).min(w - 2) };
                x0s[y * w + x] = x0;
                ts[y * w + x] = lit::<E>(if w == 1 { 0.0 } else { sc - x0 as f64 });
                vis[y * w + x] = if in_view { E::one() } else { E::zero() };
            }
        }
        let mut out = vec![E::zero(); c * h * w];
        for ci in 0..c {
            let ip = &iv[ci * h * w..(ci + 1) * h * w];
            let op = &mut out[ci * h * w..(ci + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let x0 = x0s[y * w + x];
                    let x1 = (x0 + 1).min(w - 1);
                    let t = ts[y * w + x];
                    op[y * w + x] = ip[y * w + x0] * (E::one() - t) + ip[y * w + x1] * t;
                }
            }
        }
        let mut rec = Rec::new();
        let si = rec.input(self, image, "warp_horizontal")?;
        let sd = rec.input(self, disparity, "warp_horizontal")?;
        let node = if rec.is_empty() {
            None
        } else {
            let n = rec.len();
            let iv = image.data_arc();
            let x0s = x0s.clone();
            let ts = ts.clone();
            let vis_b = vis.clone();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); n];
                if let Some(slot) = si {
                    let mut di = vec![E::zero(); c * h * w];
                    di.par_chunks_mut(h * w).enumerate().for_each(|(ci, dip)| {
                        let gp = &g[ci * h * w..(ci + 1) * h * w];
                        for y in 0..h {
                            for x in 0..w {
                                let x0 = x0s[y * w + x];
                                let x1 = (x0 + 1).min(w - 1);
                                let t = ts[y * w + x];
                                let gv = gp[y * w + x];
                                dip[y * w + x0] = dip[y * w + x0] + gv * (E::one() - t);
                                dip[y * w + x1] = dip[y * w + x1] + gv * t;
                            }
                        }
                    });
                    grads[slot] = di;
                }
                if let Some(slot) = sd {
                    let mut dd = vec![E::zero(); h * w];
                    for y in 0..h {
                        for x in 0..w {
                            if vis_b[y * w + x] == E::zero() {
                                continue;
                            }
                            let x0 = x0s[y * w + x];
                            let x1 = (x0 + 1).min(w - 1);
                            let mut acc = E::zero();
                            for ci in 0..c {
                                let ip = &iv[ci * h * w..(ci + 1) * h * w];
                                // d(out)/d(s) = I[x1] - I[x0]; s = x - d.
                                acc = acc + g[ci * h * w + y * w + x] * (ip[y * w + x1] - ip[y * w + x0]);
                            }
                            dd[y * w + x] = -acc;
                        }
                    }
                    grads[slot] = dd;
                }
                grads
            })
        };
        Ok(WarpOutput {
            warped: Tensor::with_node(vec![c, h, w], out, node),
            in_view: Tensor::with_node(vec![h, w], vis, None),
        })
    }

    /// Gather feature vectors at pixel positions: `f [C,H,W]` with positions
    /// `(y,x)` produces `[P, C]`.
    pub fn gather_pixels(&self, f: &Tensor<E>, positions: &[(usize, usize)]) -> Result<Tensor<E>> {
        if f.shape().len() != 3 {
            return Err(Error::shape("gather_pixels", format!("expected [C,H,W], got {:?}", f.shape())));
        }
        let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
        for &(y, x) in positions {
            if y >= h || x >= w {
                return Err(Error::arg("gather_pixels", format!("position ({y},{x}) outside {h}x{w}")));
            }
        }
        let p = positions.len();
        let fv = f.values();
        let mut out = vec![E::zero(); p * c];
        for (pi, &(y, x)) in positions.iter().enumerate() {
            for ci in 0..c {
                out[pi * c + ci] = fv[ci * h * w + y * w + x];
            }
        }
        let mut rec = Rec::new();
        let sf = rec.input(self, f, "gather_pixels")?;
        let node = if rec.is_empty() {
            None
        } else {
            let positions = positions.to_vec();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sf.is_some() {
                    let mut df = vec![E::zero(); c * h * w];
                    for (pi, &(y, x)) in positions.iter().enumerate() {
                        for ci in 0..c {
                            let idx = ci * h * w + y * w + x;
                            df[idx] = df[idx] + g[pi * c + ci];
                        }
                    }
                    grads[0] = df;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![p, c], out, node))
    }
}
