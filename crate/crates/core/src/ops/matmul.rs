//! Dense matrix multiply. Rayon-parallel over output rows; each output row is
//! produced by exactly one task, keeping results bitwise deterministic.

use rayon::prelude::*;

use super::{Rec};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

const PAR_THRESHOLD: usize = 1 << 14;

/// c[M,N] = a[M,K] · b[K,N]
pub(crate) fn matmul_nn<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut c = vec![E::zero(); m * n];
    let body = |(i, row): (usize, &mut [E])| {
        for p in 0..k {
            let av = a[i * k + p];
            if av == E::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        c.chunks_mut(n).enumerate().for_each(body);
    }
    c
}

/// c[M,N] = a[M,K] · b[N,K]^T
pub(crate) fn matmul_nt<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut c = vec![E::zero(); m * n];
    let body = |(i, row): (usize, &mut [E])| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cv) in row.iter_mut().enumerate() {
            *cv = super::kern::dot(arow, &b[j * k..(j + 1) * k]);
        }
    };
    if m * n * k >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        c.chunks_mut(n).enumerate().for_each(body);
    }
    c
}

/// c[K,N] = a[M,K]^T · b[M,N]
pub(crate) fn matmul_tn<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut c = vec![E::zero(); k * n];
    // Row p of c gathers over all i; owned per task.
    let body = |(p, row): (usize, &mut [E])| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == E::zero() {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        c.chunks_mut(n).enumerate().for_each(body);
    }
    c
}

impl<E: Elem> Tape<E> {
    /// `a[M,K] · b[K,N] -> [M,N]`.
    pub fn matmul(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        if a.shape().len() != 2 || b.shape().len() != 2 {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims {} vs {}", k, k2)));
        }
        let out = matmul_nn(a.values(), b.values(), m, k, n);
        let mut rec = Rec::new();
        let sa = rec.input(self, a, "matmul")?;
        let sb = rec.input(self, b, "matmul")?;
        let node = if rec.is_empty() {
            None
        } else {
            let nslots = rec.len();
            let ad = a.data_arc();
            let bd = b.data_arc();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); nslots];
                if let Some(i) = sa {
                    grads[i] = matmul_nt(g, &bd, m, n, k); // g[M,N] · b[K,N]^T
                }
                if let Some(i) = sb {
                    grads[i] = matmul_tn(&ad, g, m, k, n); // a[M,K]^T · g[M,N]
                }
                grads
            })
        };
        Ok(Tensor::with_node(vec![m, n], out, node))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn small_matmul() {
        let tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::from_vec(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.values(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn matmul_grads_match_hand_computation() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(&Tensor::from_vec(vec![1, 2], vec![2., 3.]).unwrap());
        let b = tape.leaf(&Tensor::from_vec(vec![2, 1], vec![5., 7.]).unwrap());
        let c = tape.matmul(&a, &b).unwrap();
        let s = tape.sum_all(&c);
        let g = tape.backward(&s).unwrap();
        assert_eq!(g.wrt(&a).unwrap(), vec![5., 7.]);
        assert_eq!(g.wrt(&b).unwrap(), vec![2., 3.]);
    }

    #[test]
    fn inner_dim_mismatch_rejected() {
        let tape = Tape::<f64>::new();
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![2, 2]);
        assert!(tape.matmul(&a, &b).is_err());
    }
}
