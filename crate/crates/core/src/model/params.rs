//! Flat parameter storage with a stable, version-stamped enumeration order.
//!
//! Layout structs register tensors during model construction and keep the
//! returned indices; per step, a [`ParamSet`] is bound onto the tape either
//! as trainable leaves or as frozen constants (the momentum key encoder and
//! the no-gradient forwards of the validity mask).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{numel, Tensor};

/// Bump when the parameter enumeration order or shapes change.
pub const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct ParamTensor<E: Elem> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<E>,
}

/// Weight initialization rule.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in ±sqrt(6 / fan_in).
    HeUniform { fan_in: usize },
    /// Uniform in ±bound.
    Uniform { bound: f64 },
}

#[derive(Clone, Default)]
pub struct ParamSet<E: Elem> {
    pub entries: Vec<ParamTensor<E>>,
}

impl<E: Elem> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init, rng: &mut ChaCha8Rng) -> usize {
        let n = numel(&shape);
        let data: Vec<E> = match init {
            Init::Zeros => vec![E::zero(); n],
            Init::Ones => vec![E::one(); n],
            Init::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| lit::<E>(rng.gen_range(-bound..bound))).collect()
            }
            Init::Uniform { bound } => (0..n).map(|_| lit::<E>(rng.gen_range(-bound..bound))).collect(),
        };
        self.entries.push(ParamTensor { name: name.into(), shape, data });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Deep copy with the same layout (used for the momentum key encoder).
    pub fn clone_values(&self) -> Self {
        self.clone()
    }

    /// Elementwise EMA toward `other`: `self = m * self + (1 - m) * other`.
    pub fn ema_from(&mut self, other: &ParamSet<E>, m: E) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape("ema_from", "parameter count mismatch".to_string()));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.shape != b.shape {
                return Err(Error::shape("ema_from", format!("{}: {:?} vs {:?}", a.name, a.shape, b.shape)));
            }
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x = m * *x + (E::one() - m) * *y;
            }
        }
        Ok(())
    }
}

/// Full model state: the feature-extractor set (mirrored by the momentum key
/// encoder) and the cost-aggregation set (shared across branches). Stable
/// enumeration order: extractor entries, then aggregation entries.
#[derive(Clone)]
pub struct ModelParams<E: Elem> {
    pub extractor: ParamSet<E>,
    pub aggregation: ParamSet<E>,
    pub version: u32,
}

impl<E: Elem> ModelParams<E> {
    pub fn all_entries(&self) -> impl Iterator<Item = &ParamTensor<E>> {
        self.extractor.entries.iter().chain(self.aggregation.entries.iter())
    }

    pub fn all_entries_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<E>> {
        self.extractor.entries.iter_mut().chain(self.aggregation.entries.iter_mut())
    }

    pub fn scalar_count(&self) -> usize {
        self.extractor.scalar_count() + self.aggregation.scalar_count()
    }
}

/// Parameters bound onto a tape for one step.
pub struct Bound<E: Elem> {
    pub tensors: Vec<Tensor<E>>,
    pub trainable: bool,
}

impl<E: Elem> Bound<E> {
    pub fn get(&self, idx: usize) -> &Tensor<E> {
        &self.tensors[idx]
    }
}

/// Bind every tensor of a set: as leaves when `trainable`, otherwise as
/// constants that record nothing.
pub fn bind<E: Elem>(tape: &Tape<E>, set: &ParamSet<E>, trainable: bool) -> Bound<E> {
    let tensors = set
        .entries
        .iter()
        .map(|p| {
            let t = Tensor::with_node(p.shape.clone(), p.data.clone(), None);
            if trainable {
                tape.leaf(&t)
            } else {
                t
            }
        })
        .collect();
    Bound { tensors, trainable }
}

/// Index pair of a convolution's weight and bias.
#[derive(Clone, Copy, Debug)]
pub struct ConvP {
    pub w: usize,
    pub b: usize,
}

/// Index pair of a linear layer (`[D_in, D_out]` weight plus bias).
#[derive(Clone, Copy, Debug)]
pub struct LinP {
    pub w: usize,
    pub b: usize,
}

/// Index pair of a layer-norm's affine parameters.
#[derive(Clone, Copy, Debug)]
pub struct LnP {
    pub gamma: usize,
    pub beta: usize,
}

pub fn conv_p<E: Elem>(
    set: &mut ParamSet<E>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
) -> ConvP {
    let w = set.push(format!("{name}.w"), vec![cout, cin, k, k], Init::HeUniform { fan_in: cin * k * k }, rng);
    let b = set.push(format!("{name}.b"), vec![cout], Init::Zeros, rng);
    ConvP { w, b }
}

pub fn conv3_p<E: Elem>(
    set: &mut ParamSet<E>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
) -> ConvP {
    let w = set.push(
        format!("{name}.w"),
        vec![cout, cin, k, k, k],
        Init::HeUniform { fan_in: cin * k * k * k },
        rng,
    );
    let b = set.push(format!("{name}.b"), vec![cout], Init::Zeros, rng);
    ConvP { w, b }
}

pub fn lin_p<E: Elem>(set: &mut ParamSet<E>, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize) -> LinP {
    let w = set.push(format!("{name}.w"), vec![din, dout], Init::HeUniform { fan_in: din }, rng);
    let b = set.push(format!("{name}.b"), vec![dout], Init::Zeros, rng);
    LinP { w, b }
}

pub fn ln_p<E: Elem>(set: &mut ParamSet<E>, rng: &mut ChaCha8Rng, name: &str, width: usize) -> LnP {
    let gamma = set.push(format!("{name}.gamma"), vec![width], Init::Ones, rng);
    let beta = set.push(format!("{name}.beta"), vec![width], Init::Zeros, rng);
    LnP { gamma, beta }
}

/// `x [T,Din] · W [Din,Dout] + b`
pub fn linear<E: Elem>(tape: &Tape<E>, bound: &Bound<E>, p: LinP, x: &Tensor<E>) -> Result<Tensor<E>> {
    let y = tape.matmul(x, bound.get(p.w))?;
    tape.add_rowvec(&y, bound.get(p.b))
}

pub fn conv2<E: Elem>(
    tape: &Tape<E>,
    bound: &Bound<E>,
    p: ConvP,
    x: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    tape.conv2d(x, bound.get(p.w), bound.get(p.b), stride, pad)
}

pub fn layer_norm<E: Elem>(tape: &Tape<E>, bound: &Bound<E>, p: LnP, x: &Tensor<E>) -> Result<Tensor<E>> {
    tape.layer_norm_rows(x, bound.get(p.gamma), bound.get(p.beta), lit::<E>(1e-5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn registration_is_deterministic() {
        let build = || {
            let mut set = ParamSet::<f64>::new();
            let mut r = rng::rng_from(rng::derive(1, rng::Stream::Init, 0));
            conv_p(&mut set, &mut r, "c1", 4, 3, 3);
            lin_p(&mut set, &mut r, "l1", 8, 8);
            set
        };
        let a = build();
        let b = build();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn ema_moves_toward_target() {
        let mut r = rng::rng_from(1);
        let mut a = ParamSet::<f64>::new();
        a.push("x", vec![2], Init::Zeros, &mut r);
        let mut b = ParamSet::<f64>::new();
        b.push("x", vec![2], Init::Ones, &mut r);
        a.ema_from(&b, 0.9).unwrap();
        assert!((a.entries[0].data[0] - 0.1).abs() < 1e-12);
    }
}
