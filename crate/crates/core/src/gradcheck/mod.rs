//! Finite-difference gradient checking.
//!
//! [`grad_check`] compares reverse-mode gradients of a scalar-valued tensor
//! function against central differences at randomly probed coordinates. The
//! full-pipeline check registry lives in [`suite`].

pub mod suite;

use rand::Rng;

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub probe_count: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative-error denominator floor. Below this magnitude the comparison
/// degenerates to an absolute one, which keeps near-zero true gradients from
/// inflating the ratio.
const REL_FLOOR: f64 = 1e-3;

/// Check the reverse-mode gradient of `f` at `point` with central differences
/// of step `eps`, probing at least `probes` randomly chosen coordinates
/// (all coordinates when the point is small).
///
/// `f` must be scalar-valued. Non-finite function values or gradients are
/// reported as an error, never silently.
pub fn grad_check<E, F>(
    name: &str,
    f: F,
    point: &Tensor<E>,
    eps: f64,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    E: Elem,
    F: Fn(&Tape<E>, &Tensor<E>) -> Result<Tensor<E>>,
{
    if eps <= 0.0 {
        return Err(Error::arg("grad_check", format!("eps must be positive, got {eps}")));
    }
    if probes == 0 {
        return Err(Error::arg("grad_check", "probe count must be >= 1".to_string()));
    }
    let tape = Tape::<E>::new();
    let x = tape.leaf(point);
    let loss = f(&tape, &x)?;
    if loss.len() != 1 {
        return Err(Error::arg("grad_check", format!("{name}: function is not scalar-valued")));
    }
    let loss_v = loss.item()?.to_f64().unwrap();
    if !loss_v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check", detail: format!("{name}: loss = {loss_v}") });
    }
    let analytic = tape.backward(&loss)?.wrt(&x)?;
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "grad_check", detail: format!("{name}: analytic gradient") });
    }

    let n = point.len();
    let mut coords: Vec<usize> = (0..n).collect();
    if n > probes {
        let mut r = rng::rng_from(rng::derive(seed, rng::Stream::GradCheck, 0));
        // partial Fisher-Yates: first `probes` entries are a uniform sample
        for i in 0..probes {
            let j = r.gen_range(i..n);
            coords.swap(i, j);
        }
        coords.truncate(probes);
    }

    let eval = |vals: &[E]| -> Result<f64> {
        let t = Tape::<E>::new();
        let p = Tensor::from_vec(point.shape().to_vec(), vals.to_vec())?;
        let out = f(&t, &p)?;
        let v = out.item()?.to_f64().unwrap();
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "grad_check", detail: format!("{name}: perturbed loss = {v}") });
        }
        Ok(v)
    };

    let mut vals: Vec<E> = point.values().to_vec();
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for &i in &coords {
        let orig = vals[i];
        vals[i] = orig + lit::<E>(eps);
        let fp = eval(&vals)?;
        vals[i] = orig - lit::<E>(eps);
        let fm = eval(&vals)?;
        vals[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i].to_f64().unwrap();
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }

    Ok(GradCheckReport {
        op_name: name.to_string(),
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        probe_count: coords.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_is_linear_and_exact() {
        // dyadic values and a power-of-two element count keep the central
        // difference of a linear function exact in f64
        let point =
            Tensor::<f64>::from_vec(vec![4, 4], (0..16).map(|i| i as f64 / 1024.0 - 0.5).collect()).unwrap();
        let eps = (2.0f64).powi(-20);
        let r = grad_check("mean", |t, x| Ok(t.mean_all(x)), &point, eps, 16, 0).unwrap();
        assert!(r.max_rel_error < 1e-10, "rel err {}", r.max_rel_error);
        assert!(r.probe_count >= 16);
    }

    #[test]
    fn zero_eps_rejected() {
        let point = Tensor::<f64>::ones(vec![4]);
        let r = grad_check("mean", |t, x| Ok(t.mean_all(x)), &point, 0.0, 16, 0);
        assert!(matches!(r, Err(Error::InvalidArgument { .. })));
    }

    #[test]
    fn non_finite_loss_reported_as_failure() {
        let point = Tensor::<f64>::from_vec(vec![2], vec![-1.0, -2.0]).unwrap();
        // ln of a negative number is NaN
        let r = grad_check("ln", |t, x| Ok(t.mean_all(&t.ln(x))), &point, 1e-6, 4, 0);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
