//! Shape manipulation: reshape, transpose, concatenation, slicing.

use super::{axis_split, check_axis, Rec};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{numel, Tensor};

impl<E: Elem> Tape<E> {
    /// View with a new shape of equal element count.
    pub fn reshape(&self, a: &Tensor<E>, shape: Vec<usize>) -> Result<Tensor<E>> {
        if numel(&shape) != a.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} ({} values) -> {:?} ({})", a.shape(), a.len(), shape, numel(&shape)),
            ));
        }
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "reshape")?;
        let node = if rec.is_empty() {
            None
        } else {
            rec.finish(self, a.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    grads[0] = g.to_vec();
                }
                grads
            })
        };
        Ok(Tensor::with_node(shape, a.values().to_vec(), node))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose2(&self, a: &Tensor<E>) -> Result<Tensor<E>> {
        if a.shape().len() != 2 {
            return Err(Error::shape("transpose2", format!("expected rank 2, got {:?}", a.shape())));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let av = a.values();
        let mut out = vec![E::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "transpose2")?;
        let node = if rec.is_empty() {
            None
        } else {
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    let mut da = vec![E::zero(); r * c];
                    for j in 0..c {
                        for i in 0..r {
                            da[i * c + j] = g[j * r + i];
                        }
                    }
                    grads[0] = da;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![c, r], out, node))
    }

    /// Concatenate along `axis`. All other dimensions must agree.
    pub fn concat(&self, parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        if parts.is_empty() {
            return Err(Error::arg("concat", "no tensors given".to_string()));
        }
        check_axis("concat", parts[0], axis)?;
        let rank = parts[0].shape().len();
        for p in parts {
            if p.shape().len() != rank {
                return Err(Error::shape("concat", "rank mismatch".to_string()));
            }
            for d in 0..rank {
                if d != axis && p.shape()[d] != parts[0].shape()[d] {
                    return Err(Error::shape(
                        "concat",
                        format!("dim {} differs: {:?} vs {:?}", d, p.shape(), parts[0].shape()),
                    ));
                }
            }
        }
        let mids: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_mid: usize = mids.iter().sum();
        let (outer, _, inner) = axis_split(parts[0].shape(), axis);
        let mut shape = parts[0].shape().to_vec();
        shape[axis] = total_mid;
        let mut out = vec![E::zero(); outer * total_mid * inner];
        let mut offset = 0usize;
        for (p, &mid) in parts.iter().zip(&mids) {
            let pv = p.values();
            for o in 0..outer {
                let src = o * mid * inner;
                let dst = (o * total_mid + offset) * inner;
                out[dst..dst + mid * inner].copy_from_slice(&pv[src..src + mid * inner]);
            }
            offset += mid;
        }
        let mut rec = Rec::new();
        let mut slots = Vec::with_capacity(parts.len());
        for p in parts {
            slots.push(rec.input(self, p, "concat")?);
        }
        let node = if rec.is_empty() {
            None
        } else {
            let n = rec.len();
            let mids = mids.clone();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); n];
                let mut offset = 0usize;
                for (pi, &mid) in mids.iter().enumerate() {
                    if let Some(slot) = slots[pi] {
                        let mut dp = vec![E::zero(); outer * mid * inner];
                        for o in 0..outer {
                            let src = (o * total_mid + offset) * inner;
                            let dst = o * mid * inner;
                            dp[dst..dst + mid * inner].copy_from_slice(&g[src..src + mid * inner]);
                        }
                        grads[slot] = dp;
                    }
                    offset += mid;
                }
                grads
            })
        };
        Ok(Tensor::with_node(shape, out, node))
    }

    /// Keep every even-indexed row and column of `[C,H,W]`. Composed with a
    /// same-size convolution this is the usual stride-2 layer, without the
    /// odd-kernel parity clash of the strict conv output contract.
    pub fn downsample2(&self, a: &Tensor<E>) -> Result<Tensor<E>> {
        if a.shape().len() != 3 {
            return Err(Error::shape("downsample2", format!("expected [C,H,W], got {:?}", a.shape())));
        }
        let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let av = a.values();
        let mut out = vec![E::zero(); c * oh * ow];
        for ci in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    out[(ci * oh + y) * ow + x] = av[(ci * h + 2 * y) * w + 2 * x];
                }
            }
        }
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "downsample2")?;
        let node = if rec.is_empty() {
            None
        } else {
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    let mut da = vec![E::zero(); c * h * w];
                    for ci in 0..c {
                        for y in 0..oh {
                            for x in 0..ow {
                                da[(ci * h + 2 * y) * w + 2 * x] = g[(ci * oh + y) * ow + x];
                            }
                        }
                    }
                    grads[0] = da;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![c, oh, ow], out, node))
    }

    /// Rearrange `[C,H,W]` into non-overlapping `p x p` patches as a
    /// `[T, C*p*p]` matrix (T = (H/p)*(W/p), row-major patch order). A pure
    /// index permutation; H and W must divide by `p`.
    pub fn patchify(&self, a: &Tensor<E>, p: usize) -> Result<Tensor<E>> {
        if a.shape().len() != 3 {
            return Err(Error::shape("patchify", format!("expected [C,H,W], got {:?}", a.shape())));
        }
        let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::arg("patchify", format!("size {}x{} not divisible by patch {}", h, w, p)));
        }
        let (gh, gw) = (h / p, w / p);
        let t = gh * gw;
        let cols = c * p * p;
        let av = a.values();
        let mut out = vec![E::zero(); t * cols];
        for ty in 0..gh {
            for tx in 0..gw {
                let row = ty * gw + tx;
                for ci in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            out[row * cols + (ci * p + py) * p + px] =
                                av[(ci * h + ty * p + py) * w + tx * p + px];
                        }
                    }
                }
            }
        }
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "patchify")?;
        let node = if rec.is_empty() {
            None
        } else {
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    let mut da = vec![E::zero(); c * h * w];
                    for ty in 0..gh {
                        for tx in 0..gw {
                            let row = ty * gw + tx;
                            for ci in 0..c {
                                for py in 0..p {
                                    for px in 0..p {
                                        da[(ci * h + ty * p + py) * w + tx * p + px] =
                                            g[row * cols + (ci * p + py) * p + px];
                                    }
                                }
                            }
                        }
                    }
                    grads[0] = da;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![t, cols], out, node))
    }

    /// Contiguous slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&self, a: &Tensor<E>, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        check_axis("narrow", a, axis)?;
        let (outer, mid, inner) = axis_split(a.shape(), axis);
        if start + len > mid {
            return Err(Error::arg(
                "narrow",
                format!("range {}..{} out of bounds for axis of size {}", start, start + len, mid),
            ));
        }
        let av = a.values();
        let mut out = vec![E::zero(); outer * len * inner];
        for o in 0..outer {
            let src = (o * mid + start) * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&av[src..src + len * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = len;
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "narrow")?;
        let node = if rec.is_empty() {
            None
        } else {
            let in_len = a.len();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    let mut da = vec![E::zero(); in_len];
                    for o in 0..outer {
                        let dst = (o * mid + start) * inner;
                        let src = o * len * inner;
                        da[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    grads[0] = da;
                }
                grads
            })
        };
        Ok(Tensor::with_node(shape, out, node))
    }
}
