//! Reductions: full and per-axis sums and means.

use super::{axis_split, check_axis, Rec};
use crate::elem::{lit, Elem};
use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::Tensor;

impl<E: Elem> Tape<E> {
    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(&self, a: &Tensor<E>) -> Tensor<E> {
        let s: E = a.values().iter().copied().sum();
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "sum_all").expect("stale tensor in sum_all");
        let n = a.len();
        let node = if rec.is_empty() {
            None
        } else {
            rec.finish(self, 1, move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    grads[0] = vec![g[0]; n];
                }
                grads
            })
        };
        Tensor::with_node(vec![], vec![s], node)
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean_all(&self, a: &Tensor<E>) -> Tensor<E> {
        let s = self.sum_all(a);
        self.mul_scalar(&s, E::one() / lit::<E>(a.len() as f64))
    }

    /// Sum along `axis`. With `keepdim` the axis stays as size 1, otherwise it
    /// is removed.
    pub fn sum_axis(&self, a: &Tensor<E>, axis: usize, keepdim: bool) -> Result<Tensor<E>> {
        check_axis("sum_axis", a, axis)?;
        let (outer, mid, inner) = axis_split(a.shape(), axis);
        let mut out = vec![E::zero(); outer * inner];
        let av = a.values();
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let obase = o * inner;
                for i in 0..inner {
                    out[obase + i] = out[obase + i] + av[base + i];
                }
            }
        }
        let mut shape: Vec<usize> = a.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "sum_axis")?;
        let node = if rec.is_empty() {
            None
        } else {
            let in_len = a.len();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    let mut da = vec![E::zero(); in_len];
                    for o in 0..outer {
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            let obase = o * inner;
                            for i in 0..inner {
                                da[base + i] = g[obase + i];
                            }
                        }
                    }
                    grads[0] = da;
                }
                grads
            })
        };
        Ok(Tensor::with_node(shape, out, node))
    }

    /// Mean along `axis`.
    pub fn mean_axis(&self, a: &Tensor<E>, axis: usize, keepdim: bool) -> Result<Tensor<E>> {
        check_axis("mean_axis", a, axis)?;
        let mid = a.shape()[axis];
        let s = self.sum_axis(a, axis, keepdim)?;
        Ok(self.mul_scalar(&s, E::one() / lit::<E>(mid as f64)))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn sum_axis_values_and_shape() {
        let tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s0 = tape.sum_axis(&a, 0, false).unwrap();
        assert_eq!(s0.shape(), &[3]);
        assert_eq!(s0.values(), &[5., 7., 9.]);
        let s1 = tape.sum_axis(&a, 1, true).unwrap();
        assert_eq!(s1.shape(), &[2, 1]);
        assert_eq!(s1.values(), &[6., 15.]);
    }

    #[test]
    fn mean_axis_grad_broadcasts() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(&Tensor::from_vec(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let m = tape.mean_axis(&a, 1, false).unwrap();
        let s = tape.sum_all(&m);
        let g = tape.backward(&s).unwrap();
        assert_eq!(g.wrt(&a).unwrap(), vec![0.5; 4]);
    }
}
