//! Normalization ops: stable softmax, row layer-norm, L2 normalization, and
//! the small row-broadcast helpers they lean on.

use super::{axis_split, check_axis, same_shape, Rec};
use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

impl<E: Elem> Tape<E> {
    /// Softmax along `axis`, computed with max subtraction for stability.
    /// Slices along the axis sum to 1.
    pub fn softmax_axis(&self, a: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
        check_axis("softmax_axis", a, axis)?;
        let (outer, mid, inner) = axis_split(a.shape(), axis);
        let av = a.values();
        let mut out = vec![E::zero(); av.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |m: usize| (o * mid + m) * inner + i;
                let mut mx = av[idx(0)];
                for m in 1..mid {
                    mx = mx.max(av[idx(m)]);
                }
                let mut denom = E::zero();
                for m in 0..mid {
                    let e = (av[idx(m)] - mx).exp();
                    out[idx(m)] = e;
                    denom = denom + e;
                }
                for m in 0..mid {
                    out[idx(m)] = out[idx(m)] / denom;
                }
            }
        }
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "softmax_axis")?;
        let node = if rec.is_empty() {
            None
        } else {
            let yv = out.clone();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    // dx = y * (g - sum(g*y)) per slice
                    let mut da = vec![E::zero(); yv.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |m: usize| (o * mid + m) * inner + i;
                            let mut dot = E::zero();
                            for m in 0..mid {
                                dot = dot + g[idx(m)] * yv[idx(m)];
                            }
                            for m in 0..mid {
                                da[idx(m)] = yv[idx(m)] * (g[idx(m)] - dot);
                            }
                        }
                    }
                    grads[0] = da;
                }
                grads
            })
        };
        Ok(Tensor::with_node(a.shape().to_vec(), out, node))
    }

    /// Layer normalization over the last axis of `[R, C]`, with affine
    /// parameters `gamma`, `beta` of shape `[C]`.
    pub fn layer_norm_rows(
        &self,
        x: &Tensor<E>,
        gamma: &Tensor<E>,
        beta: &Tensor<E>,
        eps: E,
    ) -> Result<Tensor<E>> {
        if x.shape().len() != 2 {
            return Err(Error::shape("layer_norm", format!("expected rank 2, got {:?}", x.shape())));
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma {:?} / beta {:?} vs width {}", gamma.shape(), beta.shape(), c),
            ));
        }
        let xv = x.values();
        let gv = gamma.values();
        let bv = beta.values();
        let cn = lit::<E>(c as f64);
        let mut out = vec![E::zero(); r * c];
        let mut xhat = vec![E::zero(); r * c];
        let mut inv_sigma = vec![E::zero(); r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mu = row.iter().copied().sum::<E>() / cn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<E>() / cn;
            let inv = E::one() / (var + eps).sqrt();
            inv_sigma[i] = inv;
            for j in 0..c {
                let xh = (row[j] - mu) * inv;
                xhat[i * c + j] = xh;
                out[i * c + j] = xh * gv[j] + bv[j];
            }
        }
        let mut rec = Rec::new();
        let sx = rec.input(self, x, "layer_norm")?;
        let sg = rec.input(self, gamma, "layer_norm")?;
        let sb = rec.input(self, beta, "layer_norm")?;
        let node = if rec.is_empty() {
            None
        } else {
            let n = rec.len();
            let gv = gamma.data_arc();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); n];
                if let Some(slot) = sx {
                    let mut dx = vec![E::zero(); r * c];
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        let xrow = &xhat[i * c..(i + 1) * c];
                        let mut mean_dxhat = E::zero();
                        let mut mean_dxhat_xhat = E::zero();
                        for j in 0..c {
                            let dxh = grow[j] * gv[j];
                            mean_dxhat = mean_dxhat + dxh;
                            mean_dxhat_xhat = mean_dxhat_xhat + dxh * xrow[j];
                        }
                        mean_dxhat = mean_dxhat / cn;
                        mean_dxhat_xhat = mean_dxhat_xhat / cn;
                        for j in 0..c {
                            let dxh = grow[j] * gv[j];
                            dx[i * c + j] = inv_sigma[i] * (dxh - mean_dxhat - xrow[j] * mean_dxhat_xhat);
                        }
                    }
                    grads[slot] = dx;
                }
                if let Some(slot) = sg {
                    let mut dg = vec![E::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            dg[j] = dg[j] + g[i * c + j] * xhat[i * c + j];
                        }
                    }
                    grads[slot] = dg;
                }
                if let Some(slot) = sb {
                    let mut db = vec![E::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] = db[j] + g[i * c + j];
                        }
                    }
                    grads[slot] = db;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![r, c], out, node))
    }

    /// L2-normalize slices along `axis`: `y = x / sqrt(sum(x^2) + eps)`.
    pub fn l2_normalize_axis(&self, a: &Tensor<E>, axis: usize, eps: E) -> Result<Tensor<E>> {
        check_axis("l2_normalize", a, axis)?;
        let (outer, mid, inner) = axis_split(a.shape(), axis);
        let av = a.values();
        let mut out = vec![E::zero(); av.len()];
        let mut inv_norm = vec![E::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |m: usize| (o * mid + m) * inner + i;
                let mut ss = E::zero();
                for m in 0..mid {
                    let v = av[idx(m)];
                    ss = ss + v * v;
                }
                let inv = E::one() / (ss + eps).sqrt();
                inv_norm[o * inner + i] = inv;
                for m in 0..mid {
                    out[idx(m)] = av[idx(m)] * inv;
                }
            }
        }
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "l2_normalize")?;
        let node = if rec.is_empty() {
            None
        } else {
            let yv = out.clone();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    // dx = (g - y * sum(g * y)) / norm per slice
                    let mut da = vec![E::zero(); yv.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |m: usize| (o * mid + m) * inner + i;
                            let mut dot = E::zero();
                            for m in 0..mid {
                                dot = dot + g[idx(m)] * yv[idx(m)];
                            }
                            let inv = inv_norm[o * inner + i];
                            for m in 0..mid {
                                da[idx(m)] = (g[idx(m)] - yv[idx(m)] * dot) * inv;
                            }
                        }
                    }
                    grads[0] = da;
                }
                grads
            })
        };
        Ok(Tensor::with_node(a.shape().to_vec(), out, node))
    }

    /// Per-row maximum of `[R, C]` as `[R, 1]`. Gradient flows to the first
    /// maximal element of each row.
    pub fn row_max(&self, a: &Tensor<E>) -> Result<Tensor<E>> {
        if a.shape().len() != 2 {
            return Err(Error::shape("row_max", format!("expected rank 2, got {:?}", a.shape())));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let av = a.values();
        let mut out = vec![E::zero(); r];
        let mut arg = vec![0usize; r];
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let (mut best, mut bj) = (row[0], 0usize);
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    bj = j;
                }
            }
            out[i] = best;
            arg[i] = bj;
        }
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "row_max")?;
        let node = if rec.is_empty() {
            None
        } else {
            rec.finish(self, r, move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    let mut da = vec![E::zero(); r * c];
                    for i in 0..r {
                        da[i * c + arg[i]] = g[i];
                    }
                    grads[0] = da;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![r, 1], out, node))
    }

    fn colvec_op(
        &self,
        a: &Tensor<E>,
        v: &Tensor<E>,
        op: &'static str,
        f: impl Fn(E, E) -> E,
        dfa: impl Fn(E, E) -> E + 'static,
        dfv: impl Fn(E, E) -> E + 'static,
    ) -> Result<Tensor<E>> {
        if a.shape().len() != 2 || v.shape() != [a.shape()[0], 1] {
            return Err(Error::shape(op, format!("{:?} with column {:?}", a.shape(), v.shape())));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let av = a.values();
        let vv = v.values();
        let mut out = vec![E::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = f(av[i * c + j], vv[i]);
            }
        }
        let mut rec = Rec::new();
        let sa = rec.input(self, a, op)?;
        let sv = rec.input(self, v, op)?;
        let node = if rec.is_empty() {
            None
        } else {
            let n = rec.len();
            let ad = a.data_arc();
            let vd = v.data_arc();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); n];
                if let Some(slot) = sa {
                    let mut da = vec![E::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = g[i * c + j] * dfa(ad[i * c + j], vd[i]);
                        }
                    }
                    grads[slot] = da;
                }
                if let Some(slot) = sv {
                    let mut dv = vec![E::zero(); r];
                    for i in 0..r {
                        for j in 0..c {
                            dv[i] = dv[i] + g[i * c + j] * dfv(ad[i * c + j], vd[i]);
                        }
                    }
                    grads[slot] = dv;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![r, c], out, node))
    }

    /// `[R,C] - [R,1]`, broadcasting the column over each row.
    pub fn sub_colvec(&self, a: &Tensor<E>, v: &Tensor<E>) -> Result<Tensor<E>> {
        self.colvec_op(a, v, "sub_colvec", |x, y| x - y, |_, _| E::one(), |_, _| -E::one())
    }

    /// `[R,C] / [R,1]`.
    pub fn div_colvec(&self, a: &Tensor<E>, v: &Tensor<E>) -> Result<Tensor<E>> {
        self.colvec_op(a, v, "div_colvec", |x, y| x / y, |_, y| E::one() / y, |x, y| -x / (y * y))
    }

    /// `[R,C] * [R,1]`.
    pub fn mul_colvec(&self, a: &Tensor<E>, v: &Tensor<E>) -> Result<Tensor<E>> {
        self.colvec_op(a, v, "mul_colvec", |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// `[R,C] + [C]`, broadcasting the row vector over each row. The usual
    /// bias add of a linear layer.
    pub fn add_rowvec(&self, a: &Tensor<E>, v: &Tensor<E>) -> Result<Tensor<E>> {
        if a.shape().len() != 2 || v.shape() != [a.shape()[1]] {
            return Err(Error::shape(
                "add_rowvec",
                format!("{:?} with row {:?}", a.shape(), v.shape()),
            ));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let av = a.values();
        let vv = v.values();
        let mut out = vec![E::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = av[i * c + j] + vv[j];
            }
        }
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "add_rowvec")?;
        let sv = rec.input(self, v, "add_rowvec")?;
        let node = if rec.is_empty() {
            None
        } else {
            let n = rec.len();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); n];
                if let Some(slot) = sa {
                    grads[slot] = g.to_vec();
                }
                if let Some(slot) = sv {
                    let mut dv = vec![E::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            dv[j] = dv[j] + g[i * c + j];
                        }
                    }
                    grads[slot] = dv;
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![r, c], out, node))
    }

    /// Mean absolute difference of two equal-shape tensors (scalar).
    pub fn l1_loss(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("l1_loss", a, b)?;
        let d = self.sub(a, b)?;
        let ad = self.abs(&d);
        Ok(self.mean_all(&ad))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_uniform_slice() {
        let tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![4], vec![3.0; 4]).unwrap();
        let s = tape.softmax_axis(&a, 0).unwrap();
        for &v in s.values() {
            assert!(close(v, 0.25, 1e-12));
        }
    }

    #[test]
    fn softmax_hand_values() {
        // logits (0, ln 3) -> (0.25, 0.75)
        let tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![2], vec![0.0, 3.0f64.ln()]).unwrap();
        let s = tape.softmax_axis(&a, 0).unwrap();
        assert!(close(s.values()[0], 0.25, 1e-12));
        assert!(close(s.values()[1], 0.75, 1e-12));
    }

    #[test]
    fn softmax_extreme_logits_sum_to_one() {
        let tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![2, 3], vec![50.0, -50.0, 12.0, -50.0, 50.0, 0.0]).unwrap();
        let s = tape.softmax_axis(&a, 1).unwrap();
        for i in 0..2 {
            let sum: f64 = s.values()[i * 3..(i + 1) * 3].iter().sum();
            assert!(close(sum, 1.0, 1e-6));
        }
    }

    #[test]
    fn l2_normalize_gives_unit_rows() {
        let tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![2, 3], vec![3., 4., 0., 1., 2., 2.]).unwrap();
        let n = tape.l2_normalize_axis(&a, 1, 0.0).unwrap();
        for i in 0..2 {
            let ss: f64 = n.values()[i * 3..(i + 1) * 3].iter().map(|v| v * v).sum();
            assert!(close(ss, 1.0, 1e-12));
        }
    }

    #[test]
    fn row_max_picks_first_tie() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(&Tensor::from_vec(vec![1, 3], vec![2.0, 2.0, 1.0]).unwrap());
        let m = tape.row_max(&a).unwrap();
        assert_eq!(m.values(), &[2.0]);
        let s = tape.sum_all(&m);
        let g = tape.backward(&s).unwrap();
        assert_eq!(g.wrt(&a).unwrap(), vec![1.0, 0.0, 0.0]);
    }
}
