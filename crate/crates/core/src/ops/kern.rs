//! Tight inner loops shared by the dense kernels. Slice-zip forms elide
//! bounds checks and autovectorize; the dot product uses four independent
//! accumulators (a fixed summation order, so results stay deterministic).

use crate::elem::Elem;

/// `dst += w * src`, elementwise over equal-length slices.
#[inline]
pub(crate) fn axpy<E: Elem>(dst: &mut [E], src: &[E], w: E) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + w * *s;
    }
}

/// Dot product with 4-way unrolled accumulation.
#[inline]
pub(crate) fn dot<E: Elem>(a: &[E], b: &[E]) -> E {
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    let (mut s0, mut s1, mut s2, mut s3) = (E::zero(), E::zero(), E::zero(), E::zero());
    for (x, y) in (&mut ca).zip(&mut cb) {
        s0 = s0 + x[0] * y[0];
        s1 = s1 + x[1] * y[1];
        s2 = s2 + x[2] * y[2];
        s3 = s3 + x[3] * y[3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s = s + *x * *y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axpy_and_dot_agree_with_naive() {
        let a: Vec<f64> = (0..23).map(|i| i as f64 * 0.3 - 2.0).collect();
        let b: Vec<f64> = (0..23).map(|i| 1.5 - i as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
        let mut dst = vec![1.0f64; 23];
        axpy(&mut dst, &a, 2.0);
        for (d, x) in dst.iter().zip(&a) {
            assert!((d - (1.0 + 2.0 * x)).abs() < 1e-12);
        }
    }
}
