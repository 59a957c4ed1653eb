//! Momentum (key) encoder: an exponentially averaged copy of the query
//! feature-extractor parameters. Updated outside the tape; no gradients are
//! ever recorded through it.

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::model::params::ParamSet;

pub struct MomentumState<E: Elem> {
    /// key extractor parameters, mirroring the query extractor layout
    pub params: ParamSet<E>,
    pub momentum: f64,
}

impl<E: Elem> MomentumState<E> {
    /// Standard initialization: the key encoder starts as a copy of the
    /// query encoder.
    pub fn init(query_extractor: &ParamSet<E>, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::arg("momentum", format!("coefficient {momentum} outside [0,1)")));
        }
        Ok(MomentumState { params: query_extractor.clone_values(), momentum })
    }
}

/// `xi_t = m xi_{t-1} + (1 - m) theta_t`, elementwise.
pub fn momentum_update<E: Elem>(state: &mut MomentumState<E>, query: &ParamSet<E>) -> Result<()> {
    state.params.ema_from(query, lit::<E>(state.momentum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Init;
    use crate::rng;

    fn set_of(v: f64) -> ParamSet<f64> {
        let mut r = rng::rng_from(0);
        let mut s = ParamSet::new();
        s.push("x", vec![4], Init::Zeros, &mut r);
        for e in s.entries.iter_mut() {
            for d in e.data.iter_mut() {
                *d = v;
            }
        }
        s
    }

    #[test]
    fn zero_momentum_copies_query() {
        let q = set_of(3.0);
        let mut st = MomentumState::init(&set_of(0.0), 0.0).unwrap();
        momentum_update(&mut st, &q).unwrap();
        assert_eq!(st.params.entries[0].data, vec![3.0; 4]);
    }

    #[test]
    fn constant_query_matches_geometric_closed_form() {
        // after n updates with constant theta: xi = theta + (xi0 - theta) m^n
        let q = set_of(1.0);
        let m = 0.9;
        let mut st = MomentumState::init(&set_of(5.0), m).unwrap();
        for _ in 0..10 {
            momentum_update(&mut st, &q).unwrap();
        }
        let expect = 1.0 + (5.0 - 1.0) * m.powi(10);
        for &v in &st.params.entries[0].data {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn ema_stays_on_segment() {
        let q = set_of(2.0);
        let mut st = MomentumState::init(&set_of(0.0), 0.999).unwrap();
        momentum_update(&mut st, &q).unwrap();
        for &v in &st.params.entries[0].data {
            assert!((0.0..=2.0).contains(&v));
        }
    }

    #[test]
    fn invalid_momentum_rejected() {
        assert!(MomentumState::init(&set_of(0.0), 1.0).is_err());
        assert!(MomentumState::init(&set_of(0.0), -0.1).is_err());
    }
}
