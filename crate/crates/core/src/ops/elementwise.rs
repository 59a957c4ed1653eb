//! Elementwise arithmetic with per-element chain rules.

use super::{same_shape, Rec};
use crate::elem::{lit, Elem};
use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::Tensor;

impl<E: Elem> Tape<E> {
    fn binary(
        &self,
        a: &Tensor<E>,
        b: &Tensor<E>,
        op: &'static str,
        f: impl Fn(E, E) -> E,
        dfa: impl Fn(E, E) -> E + 'static,
        dfb: impl Fn(E, E) -> E + 'static,
    ) -> Result<Tensor<E>> {
        same_shape(op, a, b)?;
        let out: Vec<E> = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
        let mut rec = Rec::new();
        let sa = rec.input(self, a, op)?;
        let sb = rec.input(self, b, op)?;
        let node = if rec.is_empty() {
            None
        } else {
            let n = rec.len();
            let ad = a.data_arc();
            let bd = b.data_arc();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); n];
                if let Some(i) = sa {
                    grads[i] = g
                        .iter()
                        .zip(ad.iter().zip(bd.iter()))
                        .map(|(&g, (&x, &y))| g * dfa(x, y))
                        .collect();
                }
                if let Some(i) = sb {
                    grads[i] = g
                        .iter()
                        .zip(ad.iter().zip(bd.iter()))
                        .map(|(&g, (&x, &y))| g * dfb(x, y))
                        .collect();
                }
                grads
            })
        };
        Ok(Tensor::with_node(a.shape().to_vec(), out, node))
    }

    fn unary(
        &self,
        a: &Tensor<E>,
        op: &'static str,
        f: impl Fn(E) -> E,
        df: impl Fn(E) -> E + 'static,
    ) -> Tensor<E> {
        let out: Vec<E> = a.values().iter().map(|&x| f(x)).collect();
        let mut rec = Rec::new();
        // Unary ops cannot hit a stale handle through `slot` in a way the
        // caller could not; propagate by unwrapping into a constant is wrong,
        // so treat stale as a programming error.
        let sa = rec.input(self, a, op).expect("stale tensor in unary op");
        let node = if rec.is_empty() {
            None
        } else {
            let ad = a.data_arc();
            rec.finish(self, out.len(), move |g| {
                let mut grads = vec![Vec::new(); 1];
                if sa.is_some() {
                    grads[0] = g.iter().zip(ad.iter()).map(|(&g, &x)| g * df(x)).collect();
                }
                grads
            })
        };
        Tensor::with_node(a.shape().to_vec(), out, node)
    }

    pub fn add(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(a, b, "add", |x, y| x + y, |_, _| E::one(), |_, _| E::one())
    }

    pub fn sub(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(a, b, "sub", |x, y| x - y, |_, _| E::one(), |_, _| -E::one())
    }

    pub fn mul(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(a, b, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(a, b, "div", |x, y| x / y, |_, y| E::one() / y, |x, y| -x / (y * y))
    }

    pub fn add_scalar(&self, a: &Tensor<E>, s: E) -> Tensor<E> {
        self.unary(a, "add_scalar", |x| x + s, |_| E::one())
    }

    pub fn mul_scalar(&self, a: &Tensor<E>, s: E) -> Tensor<E> {
        self.unary(a, "mul_scalar", |x| x * s, move |_| s)
    }

    pub fn neg(&self, a: &Tensor<E>) -> Tensor<E> {
        self.unary(a, "neg", |x| -x, |_| -E::one())
    }

    pub fn exp(&self, a: &Tensor<E>) -> Tensor<E> {
        self.unary(a, "exp", |x| x.exp(), |x| x.exp())
    }

    pub fn ln(&self, a: &Tensor<E>) -> Tensor<E> {
        self.unary(a, "ln", |x| x.ln(), |x| E::one() / x)
    }

    pub fn sqrt(&self, a: &Tensor<E>) -> Tensor<E> {
        self.unary(a, "sqrt", |x| x.sqrt(), |x| E::one() / (lit::<E>(2.0) * x.sqrt()))
    }

    /// |x| with subgradient 0 at the kink.
    pub fn abs(&self, a: &Tensor<E>) -> Tensor<E> {
        self.unary(
            a,
            "abs",
            |x| x.abs(),
            |x| {
                if x > E::zero() {
                    E::one()
                } else if x < E::zero() {
                    -E::one()
                } else {
                    E::zero()
                }
            },
        )
    }

    pub fn relu(&self, a: &Tensor<E>) -> Tensor<E> {
        self.unary(a, "relu", |x| x.max(E::zero()), |x| if x > E::zero() { E::one() } else { E::zero() })
    }

    /// Leaky ReLU with negative slope 0.1.
    pub fn leaky_relu(&self, a: &Tensor<E>) -> Tensor<E> {
        let slope = lit::<E>(0.1);
        self.unary(
            a,
            "leaky_relu",
            move |x| if x > E::zero() { x } else { x * slope },
            move |x| if x > E::zero() { E::one() } else { slope },
        )
    }

    /// Clamp with pass-through gradient inside `[lo, hi]`, zero outside.
    pub fn clamp(&self, a: &Tensor<E>, lo: E, hi: E) -> Tensor<E> {
        self.unary(
            a,
            "clamp",
            move |x| x.max(lo).min(hi),
            move |x| if x >= lo && x <= hi { E::one() } else { E::zero() },
        )
    }

    /// Elementwise smooth-L1 with transition point 1.0:
    /// `0.5 x^2` for `|x| < 1`, `|x| - 0.5` otherwise.
    pub fn smooth_l1_unit(&self, a: &Tensor<E>) -> Tensor<E> {
        let half = lit::<E>(0.5);
        self.unary(
            a,
            "smooth_l1",
            move |x| {
                if x.abs() < E::one() {
                    half * x * x
                } else {
                    x.abs() - half
                }
            },
            |x| {
                if x.abs() < E::one() {
                    x
                } else if x > E::zero() {
                    E::one()
                } else {
                    -E::one()
                }
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn elementwise_values() {
        let tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let b = Tensor::from_vec(vec![3], vec![2.0, 4.0, -1.0]).unwrap();
        assert_eq!(tape.add(&a, &b).unwrap().values(), &[3.0, 2.0, -0.5]);
        assert_eq!(tape.sub(&a, &b).unwrap().values(), &[-1.0, -6.0, 1.5]);
        assert_eq!(tape.mul(&a, &b).unwrap().values(), &[2.0, -8.0, -0.5]);
        assert_eq!(tape.div(&a, &b).unwrap().values(), &[0.5, -0.5, -0.5]);
        assert_eq!(tape.relu(&a).values(), &[1.0, 0.0, 0.5]);
        assert_eq!(tape.leaky_relu(&a).values()[1], -0.2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let tape = Tape::<f64>::new();
        let a = Tensor::<f64>::zeros(vec![2, 2]);
        let b = Tensor::<f64>::zeros(vec![4]);
        assert!(tape.add(&a, &b).is_err());
    }

    #[test]
    fn smooth_l1_zones() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![3], vec![0.5, 2.0, -3.0]).unwrap();
        let y = tape.smooth_l1_unit(&x);
        assert_eq!(y.values(), &[0.125, 1.5, 2.5]);
    }

    #[test]
    fn mixed_constant_and_recorded_inputs() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap());
        let c = Tensor::from_vec(vec![2], vec![2.0, 0.5]).unwrap();
        let y = tape.mul(&x, &c).unwrap();
        let s = tape.sum_all(&y);
        let g = tape.backward(&s).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), vec![2.0, 0.5]);
    }
}
