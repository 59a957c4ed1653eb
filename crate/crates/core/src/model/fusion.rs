//! Fusion of the aggregated attention tokens with the convolutional pyramid:
//! tokens are resized to each pyramid scale, concatenated channel-wise, and
//! decoded top-down to the configured output widths.

use rand_chacha::ChaCha8Rng;

use super::params::{conv2, conv_p, Bound, ConvP, ParamSet};
use super::{FeaturePyramid, ModelConfig};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct FuseLayout {
    lat: [ConvP; 3],
    out: [ConvP; 3],
    proj84: ConvP,
    proj42: ConvP,
}

impl FuseLayout {
    pub fn register<E: Elem>(cfg: &ModelConfig, set: &mut ParamSet<E>, rng: &mut ChaCha8Rng) -> FuseLayout {
        let cat = cfg.fpn_pyramid + cfg.vit_width;
        let [o2, o4, o8] = cfg.out_channels;
        FuseLayout {
            lat: [
                conv_p(set, rng, "fuse.lat2", o2, cat, 1),
                conv_p(set, rng, "fuse.lat4", o4, cat, 1),
                conv_p(set, rng, "fuse.lat8", o8, cat, 1),
            ],
            out: [
                conv_p(set, rng, "fuse.out2", o2, o2, 3),
                conv_p(set, rng, "fuse.out4", o4, o4, 3),
                conv_p(set, rng, "fuse.out8", o8, o8, 3),
            ],
            proj84: conv_p(set, rng, "fuse.proj84", o4, o8, 1),
            proj42: conv_p(set, rng, "fuse.proj42", o2, o4, 1),
        }
    }

    /// `tokens` is the aggregated `[T, D]` output of the attention stack for
    /// one view, with its grid dimensions.
    pub fn forward<E: Elem>(
        &self,
        tape: &Tape<E>,
        bound: &Bound<E>,
        cfg: &ModelConfig,
        pyramid: &FeaturePyramid<E>,
        tokens: &Tensor<E>,
        grid: (usize, usize),
    ) -> Result<FeaturePyramid<E>> {
        let d = cfg.vit_width;
        if tokens.shape() != [grid.0 * grid.1, d] {
            return Err(Error::shape(
                "fuse_and_decode",
                format!("tokens {:?} vs grid {:?} width {}", tokens.shape(), grid, d),
            ));
        }
        if pyramid.s2.shape()[0] != cfg.fpn_pyramid {
            return Err(Error::shape(
                "fuse_and_decode",
                format!("pyramid channels {} vs config {}", pyramid.s2.shape()[0], cfg.fpn_pyramid),
            ));
        }
        // [T, D] -> [D, gh, gw]
        let grid_t = tape.transpose2(tokens)?;
        let tok = tape.reshape(&grid_t, vec![d, grid.0, grid.1])?;

        let cat_at = |p: &Tensor<E>| -> Result<Tensor<E>> {
            let (h, w) = (p.shape()[1], p.shape()[2]);
            let resized = tape.bilinear_resize(&tok, h, w)?;
            tape.concat(&[p, &resized], 0)
        };
        let c8 = cat_at(&pyramid.s8)?;
        let c4 = cat_at(&pyramid.s4)?;
        let c2 = cat_at(&pyramid.s2)?;

        let f8 = conv2(tape, bound, self.out[2], &conv2(tape, bound, self.lat[2], &c8, 1, 0)?, 1, 1)?;
        let up8 = conv2(
            tape,
            bound,
            self.proj84,
            &tape.bilinear_resize(&f8, pyramid.s4.shape()[1], pyramid.s4.shape()[2])?,
            1,
            0,
        )?;
        let l4 = conv2(tape, bound, self.lat[1], &c4, 1, 0)?;
        let f4 = conv2(tape, bound, self.out[1], &tape.add(&l4, &up8)?, 1, 1)?;
        let up4 = conv2(
            tape,
            bound,
            self.proj42,
            &tape.bilinear_resize(&f4, pyramid.s2.shape()[1], pyramid.s2.shape()[2])?,
            1,
            0,
        )?;
        let l2 = conv2(tape, bound, self.lat[0], &c2, 1, 0)?;
        let f2 = conv2(tape, bound, self.out[0], &tape.add(&l2, &up4)?, 1, 1)?;

        // Per-pixel L2 normalization with a sqrt(C) gain keeps correlation
        // logits O(1); without it the volume softmax saturates at init and
        // the soft-argmax gradient starves.
        let normalize = |f: Tensor<E>| -> Result<Tensor<E>> {
            let c = f.shape()[0] as f64;
            let n = tape.l2_normalize_axis(&f, 0, crate::elem::lit(1e-8))?;
            Ok(tape.mul_scalar(&n, crate::elem::lit(c.sqrt())))
        };
        Ok(FeaturePyramid { s2: normalize(f2)?, s4: normalize(f4)?, s8: normalize(f8)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::bind;
    use crate::model::Model;

    #[test]
    fn fused_output_has_config_channels() {
        let cfg = ModelConfig::tiny(8);
        let (model, params) = Model::build::<f64>(&cfg, 7);
        let tape = Tape::<f64>::new();
        let ext = bind(&tape, &params.extractor, false);
        let img = Tensor::<f64>::full(vec![3, 16, 32], 0.3);
        let pyr = model.fpn.forward(&tape, &ext, &img).unwrap();
        let taps = model.vit.forward(&tape, &ext, &cfg, &img).unwrap();
        let (agg, _) = model.mla.forward(&tape, &ext, &taps.layers, &taps.layers).unwrap();
        let fused = model
            .fuse
            .forward(&tape, &ext, &cfg, &pyr, &agg, (taps.grid_h, taps.grid_w))
            .unwrap();
        assert_eq!(fused.s2.shape(), &[cfg.out_channels[0], 8, 16]);
        assert_eq!(fused.s4.shape(), &[cfg.out_channels[1], 4, 8]);
        assert_eq!(fused.s8.shape(), &[cfg.out_channels[2], 2, 4]);
    }

    #[test]
    fn zero_tokens_leave_only_the_fpn_path() {
        let cfg = ModelConfig::tiny(8);
        let (model, params) = Model::build::<f64>(&cfg, 8);
        let tape = Tape::<f64>::new();
        let ext = bind(&tape, &params.extractor, false);
        let img = Tensor::<f64>::full(vec![3, 16, 32], 0.3);
        let pyr = model.fpn.forward(&tape, &ext, &img).unwrap();
        let zero_tokens = Tensor::<f64>::zeros(vec![2 * 4, cfg.vit_width]);
        let a = model.fuse.forward(&tape, &ext, &cfg, &pyr, &zero_tokens, (2, 4)).unwrap();
        // changing the token values changes the output; zero tokens must
        // reproduce the zero-token run exactly regardless of the vit params
        let b = model.fuse.forward(&tape, &ext, &cfg, &pyr, &zero_tokens, (2, 4)).unwrap();
        assert_eq!(a.s4.values(), b.s4.values());
    }
}
