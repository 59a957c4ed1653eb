//! Toy transformer stem: patch embedding at stride 8, resizable positional
//! embedding, and a short stack of pre-norm blocks whose outputs are all
//! tapped for the multi-layer attention stage.

use rand_chacha::ChaCha8Rng;

use super::params::{layer_norm, lin_p, linear, ln_p, Bound, LinP, LnP, ParamSet};
use super::ModelConfig;
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::model::params::Init;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AttnP {
    pub q: LinP,
    pub k: LinP,
    pub v: LinP,
    pub o: LinP,
}

fn attn_p<E: Elem>(set: &mut ParamSet<E>, rng: &mut ChaCha8Rng, name: &str, d: usize) -> AttnP {
    AttnP {
        q: lin_p(set, rng, &format!("{name}.q"), d, d),
        k: lin_p(set, rng, &format!("{name}.k"), d, d),
        v: lin_p(set, rng, &format!("{name}.v"), d, d),
        o: lin_p(set, rng, &format!("{name}.o"), d, d),
    }
}

/// Multi-head attention from projected q/k/v sources. `q_src` and `kv_src`
/// are `[T, D]`; heads split the feature axis.
pub fn multi_head<E: Elem>(
    tape: &Tape<E>,
    bound: &Bound<E>,
    p: &AttnP,
    heads: usize,
    q_src: &Tensor<E>,
    kv_src: &Tensor<E>,
) -> Result<Tensor<E>> {
    let d = q_src.shape()[1];
    if d % heads != 0 {
        return Err(Error::arg("multi_head", format!("width {} not divisible by {} heads", d, heads)));
    }
    let dh = d / heads;
    let q = linear(tape, bound, p.q, q_src)?;
    let k = linear(tape, bound, p.k, kv_src)?;
    let v = linear(tape, bound, p.v, kv_src)?;
    let mut head_outs = Vec::with_capacity(heads);
    for hj in 0..heads {
        let qh = tape.narrow(&q, 1, hj * dh, dh)?;
        let kh = tape.narrow(&k, 1, hj * dh, dh)?;
        let vh = tape.narrow(&v, 1, hj * dh, dh)?;
        head_outs.push(tape.scaled_dot_attention(&qh, &kh, &vh)?);
    }
    let refs: Vec<&Tensor<E>> = head_outs.iter().collect();
    let cat = tape.concat(&refs, 1)?;
    linear(tape, bound, p.o, &cat)
}

#[derive(Clone, Debug)]
struct VitBlock {
    ln1: LnP,
    attn: AttnP,
    ln2: LnP,
    mlp1: LinP,
    mlp2: LinP,
}

#[derive(Clone, Debug)]
pub struct VitLayout {
    patch: LinP,
    pos: usize,
    blocks: Vec<VitBlock>,
}

/// Per-layer token grids tapped from every block.
pub struct VitTaps<E: Elem> {
    /// one `[T, D]` tensor per block, in depth order
    pub layers: Vec<Tensor<E>>,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl VitLayout {
    pub fn register<E: Elem>(cfg: &ModelConfig, set: &mut ParamSet<E>, rng: &mut ChaCha8Rng) -> VitLayout {
        let d = cfg.vit_width;
        let patch = lin_p(set, rng, "vit.patch", cfg.in_channels * cfg.patch * cfg.patch, d);
        let pos = set.push(
            "vit.pos".to_string(),
            vec![d, cfg.base_grid.0, cfg.base_grid.1],
            Init::Uniform { bound: 0.02 },
            rng,
        );
        let blocks = (0..cfg.vit_blocks)
            .map(|i| VitBlock {
                ln1: ln_p(set, rng, &format!("vit.b{i}.ln1"), d),
                attn: attn_p(set, rng, &format!("vit.b{i}.attn"), d),
                ln2: ln_p(set, rng, &format!("vit.b{i}.ln2"), d),
                mlp1: lin_p(set, rng, &format!("vit.b{i}.mlp1"), d, d * cfg.mlp_ratio),
                mlp2: lin_p(set, rng, &format!("vit.b{i}.mlp2"), d * cfg.mlp_ratio, d),
            })
            .collect();
        VitLayout { patch, pos, blocks }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &Tape<E>,
        bound: &Bound<E>,
        cfg: &ModelConfig,
        image: &Tensor<E>,
    ) -> Result<VitTaps<E>> {
        let (h, w) = (image.shape()[1], image.shape()[2]);
        if h % cfg.patch != 0 || w % cfg.patch != 0 {
            return Err(Error::arg(
                "toy_vit_forward",
                format!("size {}x{} not divisible by patch {}", h, w, cfg.patch),
            ));
        }
        let (gh, gw) = (h / cfg.patch, w / cfg.patch);
        let d = cfg.vit_width;
        // patch embedding: [T, C*p*p] x [C*p*p, D]
        let patches = tape.patchify(image, cfg.patch)?;
        let emb = linear(tape, bound, self.patch, &patches)?;
        // positional embedding is stored as a grid, resized to the token grid
        let pos_grid = tape.bilinear_resize(bound.get(self.pos), gh, gw)?;
        let pos_tokens = tape.transpose2(&tape.reshape(&pos_grid, vec![d, gh * gw])?)?;
        let mut tokens = tape.add(&emb, &pos_tokens)?;

        let mut layers = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let n1 = layer_norm(tape, bound, blk.ln1, &tokens)?;
            let attn = multi_head(tape, bound, &blk.attn, cfg.vit_heads, &n1, &n1)?;
            tokens = tape.add(&tokens, &attn)?;
            let n2 = layer_norm(tape, bound, blk.ln2, &tokens)?;
            let m = linear(tape, bound, blk.mlp2, &tape.leaky_relu(&linear(tape, bound, blk.mlp1, &n2)?))?;
            tokens = tape.add(&tokens, &m)?;
            layers.push(tokens.clone());
        }
        Ok(VitTaps { layers, grid_h: gh, grid_w: gw })
    }

    /// Zero the positional embedding (used by the equivariance test).
    #[cfg(test)]
    pub(crate) fn pos_index(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::bind;
    use crate::model::Model;

    #[test]
    fn four_taps_of_expected_grid() {
        let cfg = ModelConfig::standard(32, 2);
        let (model, params) = Model::build::<f64>(&cfg, 1);
        let tape = Tape::<f64>::new();
        let ext = bind(&tape, &params.extractor, false);
        let img = Tensor::<f64>::full(vec![3, 64, 128], 0.4);
        let taps = model.vit.forward(&tape, &ext, &cfg, &img).unwrap();
        assert_eq!(taps.layers.len(), 4);
        assert_eq!((taps.grid_h, taps.grid_w), (8, 16));
        for l in &taps.layers {
            assert_eq!(l.shape(), &[128, cfg.vit_width]);
        }
    }

    #[test]
    fn tokens_permute_with_patches_when_pos_removed() {
        let cfg = ModelConfig::tiny(8);
        let (model, mut params) = Model::build::<f64>(&cfg, 2);
        for v in params.extractor.entries[model.vit.pos_index()].data.iter_mut() {
            *v = 0.0;
        }
        let tape = Tape::<f64>::new();
        let ext = bind(&tape, &params.extractor, false);

        // image of 2x4 patches with distinct content
        let (h, w) = (16, 32);
        let data: Vec<f64> = (0..3 * h * w).map(|i| ((i * 131 % 997) as f64) / 997.0).collect();
        let img = Tensor::from_vec(vec![3, h, w], data).unwrap();
        let taps = model.vit.forward(&tape, &ext, &cfg, &img).unwrap();
        let (gh, gw) = (taps.grid_h, taps.grid_w);
        let t = gh * gw;

        // permute patches: reverse order
        let perm: Vec<usize> = (0..t).rev().collect();
        let mut pdata = vec![0.0f64; 3 * h * w];
        let p = cfg.patch;
        for (dst, &src) in perm.iter().enumerate() {
            let (dy, dx) = (dst / gw, dst % gw);
            let (sy, sx) = (src / gw, src % gw);
            for c in 0..3 {
                for yy in 0..p {
                    for xx in 0..p {
                        pdata[c * h * w + (dy * p + yy) * w + dx * p + xx] =
                            img.at3(c, sy * p + yy, sx * p + xx);
                    }
                }
            }
        }
        let pimg = Tensor::from_vec(vec![3, h, w], pdata).unwrap();
        let ptaps = model.vit.forward(&tape, &ext, &cfg, &pimg).unwrap();

        let d = cfg.vit_width;
        for (a, b) in taps.layers.iter().zip(&ptaps.layers) {
            for (dst, &src) in perm.iter().enumerate() {
                for j in 0..d {
                    let va = a.values()[src * d + j];
                    let vb = b.values()[dst * d + j];
                    assert!((va - vb).abs() < 1e-9, "token {dst} feature {j}");
                }
            }
        }
    }
}
