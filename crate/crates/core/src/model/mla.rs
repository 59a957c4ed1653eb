//! Multi-layer attention over the tapped transformer depths: per block, the
//! current tap plus the modulated previous output passes through self
//! attention per view and cross attention between views. Weights are shared
//! between the left and right streams; the first block carries no modulation
//! coefficient.

use rand_chacha::ChaCha8Rng;

use super::params::{layer_norm, ln_p, Bound, Init, LnP, ParamSet};
use super::vit::{multi_head, AttnP};
use super::ModelConfig;
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct MlaBlock {
    /// adaptive layer-modulation coefficient; None for the first block
    beta: Option<usize>,
    ln_self: LnP,
    self_attn: AttnP,
    ln_cross: LnP,
    cross_attn: AttnP,
}

#[derive(Clone, Debug)]
pub struct MlaLayout {
    blocks: Vec<MlaBlock>,
    heads: usize,
}

fn attn_p<E: Elem>(set: &mut ParamSet<E>, rng: &mut ChaCha8Rng, name: &str, d: usize) -> AttnP {
    use super::params::lin_p;
    AttnP {
        q: lin_p(set, rng, &format!("{name}.q"), d, d),
        k: lin_p(set, rng, &format!("{name}.k"), d, d),
        v: lin_p(set, rng, &format!("{name}.v"), d, d),
        o: lin_p(set, rng, &format!("{name}.o"), d, d),
    }
}

impl MlaLayout {
    pub fn register<E: Elem>(cfg: &ModelConfig, set: &mut ParamSet<E>, rng: &mut ChaCha8Rng) -> MlaLayout {
        let d = cfg.vit_width;
        let blocks = (0..cfg.vit_blocks)
            .map(|i| MlaBlock {
                beta: if i == 0 {
                    None
                } else {
                    Some(set.push(format!("mla.b{i}.beta"), vec![1], Init::Ones, rng))
                },
                ln_self: ln_p(set, rng, &format!("mla.b{i}.ln_self"), d),
                self_attn: attn_p(set, rng, &format!("mla.b{i}.self"), d),
                ln_cross: ln_p(set, rng, &format!("mla.b{i}.ln_cross"), d),
                cross_attn: attn_p(set, rng, &format!("mla.b{i}.cross"), d),
            })
            .collect();
        MlaLayout { blocks, heads: cfg.vit_heads }
    }

    /// Aggregate tapped layers of both views into one feature pair.
    pub fn forward<E: Elem>(
        &self,
        tape: &Tape<E>,
        bound: &Bound<E>,
        left_layers: &[Tensor<E>],
        right_layers: &[Tensor<E>],
    ) -> Result<(Tensor<E>, Tensor<E>)> {
        if left_layers.len() != right_layers.len() || left_layers.is_empty() {
            return Err(Error::shape(
                "mla_stack",
                format!("layer counts {} vs {}", left_layers.len(), right_layers.len()),
            ));
        }
        if left_layers.len() > self.blocks.len() {
            return Err(Error::arg(
                "mla_stack",
                format!("{} layers exceed {} registered blocks", left_layers.len(), self.blocks.len()),
            ));
        }
        for (l, r) in left_layers.iter().zip(right_layers) {
            if l.shape() != r.shape() {
                return Err(Error::shape("mla_stack", format!("{:?} vs {:?}", l.shape(), r.shape())));
            }
        }
        let mut prev: Option<(Tensor<E>, Tensor<E>)> = None;
        for (li, (tap_l, tap_r)) in left_layers.iter().zip(right_layers).enumerate() {
            let blk = &self.blocks[li];
            let (in_l, in_r) = match (&prev, blk.beta) {
                (Some((pl, pr)), Some(beta)) => {
                    let b = bound.get(beta);
                    (tape.add(tap_l, &scale_by(tape, pl, b)?)?, tape.add(tap_r, &scale_by(tape, pr, b)?)?)
                }
                _ => (tap_l.clone(), tap_r.clone()),
            };
            let nl = layer_norm(tape, bound, blk.ln_self, &in_l)?;
            let nr = layer_norm(tape, bound, blk.ln_self, &in_r)?;
            let al = tape.add(&in_l, &multi_head(tape, bound, &blk.self_attn, self.heads, &nl, &nl)?)?;
            let ar = tape.add(&in_r, &multi_head(tape, bound, &blk.self_attn, self.heads, &nr, &nr)?)?;
            let cl = layer_norm(tape, bound, blk.ln_cross, &al)?;
            let cr = layer_norm(tape, bound, blk.ln_cross, &ar)?;
            let bl = tape.add(&al, &multi_head(tape, bound, &blk.cross_attn, self.heads, &cl, &cr)?)?;
            let br = tape.add(&ar, &multi_head(tape, bound, &blk.cross_attn, self.heads, &cr, &cl)?)?;
            prev = Some((bl, br));
        }
        Ok(prev.unwrap())
    }
}

/// Multiply a tensor by a one-element (recorded) scalar tensor.
fn scale_by<E: Elem>(tape: &Tape<E>, t: &Tensor<E>, s: &Tensor<E>) -> Result<Tensor<E>> {
    let flat = tape.reshape(t, vec![1, t.len()])?;
    let sv = tape.reshape(s, vec![1, 1])?;
    let scaled = tape.mul_colvec(&flat, &sv)?;
    tape.reshape(&scaled, t.shape().to_vec())
}
