//! AdamW with decoupled weight decay. Parameter blocks with non-finite
//! gradients are skipped individually and counted; optimizer state for a
//! skipped block is untouched.

use log::warn;

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::model::params::ParamTensor;

#[derive(Clone)]
pub struct AdamState<E: Elem> {
    /// first/second moment arrays, parallel to the parameter enumeration
    pub m: Vec<Vec<E>>,
    pub v: Vec<Vec<E>>,
    pub step: u64,
    pub skipped_blocks: u64,
}

impl<E: Elem> AdamState<E> {
    pub fn new(block_lens: &[usize]) -> Self {
        AdamState {
            m: block_lens.iter().map(|&n| vec![E::zero(); n]).collect(),
            v: block_lens.iter().map(|&n| vec![E::zero(); n]).collect(),
            step: 0,
            skipped_blocks: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

/// One optimizer step over all blocks. `params` and `grads` follow the same
/// stable enumeration as `state`.
pub fn adamw_step<'a, E: Elem>(
    params: impl Iterator<Item = &'a mut ParamTensor<E>>,
    grads: &[Vec<E>],
    state: &mut AdamState<E>,
    hp: AdamHyper,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let b1 = lit::<E>(hp.beta1);
    let b2 = lit::<E>(hp.beta2);
    let lr = lit::<E>(hp.lr);
    let wd = lit::<E>(hp.weight_decay);
    let eps = lit::<E>(hp.eps);
    let bc1 = lit::<E>(1.0 - hp.beta1.powi(t));
    let bc2 = lit::<E>(1.0 - hp.beta2.powi(t));

    let mut count = 0usize;
    for (bi, p) in params.enumerate() {
        count = bi + 1;
        if bi >= grads.len() || bi >= state.m.len() {
            return Err(Error::arg("adamw_step", format!("block {bi} beyond state/grads")));
        }
        let g = &grads[bi];
        if g.len() != p.data.len() {
            return Err(Error::shape("adamw_step", format!("{}: grad len {} vs {}", p.name, g.len(), p.data.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            state.skipped_blocks += 1;
            warn!("adamw: non-finite gradient, skipping block {} (total skipped {})", p.name, state.skipped_blocks);
            continue;
        }
        let m = &mut state.m[bi];
        let v = &mut state.v[bi];
        for i in 0..p.data.len() {
            m[i] = b1 * m[i] + (E::one() - b1) * g[i];
            v[i] = b2 * v[i] + (E::one() - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            // decoupled decay, then the adaptive update
            p.data[i] = p.data[i] - lr * wd * p.data[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    if count != grads.len() {
        return Err(Error::arg("adamw_step", format!("{} blocks vs {} grads", count, grads.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> Vec<ParamTensor<f64>> {
        vec![ParamTensor { name: "p".to_string(), shape: vec![1], data: vec![v] }]
    }

    fn hp(lr: f64, wd: f64) -> AdamHyper {
        AdamHyper { lr, beta1: 0.9, beta2: 0.999, weight_decay: wd, eps: 1e-8 }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = one_param(2.5);
        let mut st = AdamState::new(&[1]);
        adamw_step(p.iter_mut(), &[vec![0.0]], &mut st, hp(0.1, 0.0)).unwrap();
        assert_eq!(p[0].data[0], 2.5);
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // constant gradient 1, lr 0.1, first step: bias-corrected ratio is 1
        let mut p = one_param(1.0);
        let mut st = AdamState::new(&[1]);
        adamw_step(p.iter_mut(), &[vec![1.0]], &mut st, hp(0.1, 0.0)).unwrap();
        let expect = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].data[0] - expect).abs() < 1e-12);
        assert!((p[0].data[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_skips_block_and_counts() {
        let mut p = one_param(1.0);
        let mut st = AdamState::new(&[1]);
        adamw_step(p.iter_mut(), &[vec![f64::NAN]], &mut st, hp(0.1, 0.0)).unwrap();
        assert_eq!(p[0].data[0], 1.0);
        assert_eq!(st.skipped_blocks, 1);
        assert_eq!(st.m[0][0], 0.0);
    }

    #[test]
    fn decoupled_decay_shrinks_parameters_without_gradient_coupling() {
        let mut p = one_param(10.0);
        let mut st = AdamState::new(&[1]);
        adamw_step(p.iter_mut(), &[vec![0.0]], &mut st, hp(0.1, 0.01)).unwrap();
        assert!((p[0].data[0] - (10.0 - 0.1 * 0.01 * 10.0)).abs() < 1e-12);
    }
}
