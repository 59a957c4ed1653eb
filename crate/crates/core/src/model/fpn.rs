//! Convolutional pyramid stream: strided encoder plus top-down refinement,
//! producing equal-width features at strides {2, 4, 8}.

use rand_chacha::ChaCha8Rng;

use super::params::{conv2, conv_p, Bound, ConvP, ParamSet};
use super::{FeaturePyramid, ModelConfig};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct FpnLayout {
    enc: [ConvP; 3],
    top: ConvP,
    lat: [ConvP; 2],
    smooth: [ConvP; 2],
}

impl FpnLayout {
    pub fn register<E: Elem>(cfg: &ModelConfig, set: &mut ParamSet<E>, rng: &mut ChaCha8Rng) -> FpnLayout {
        let [c2, c4, c8] = cfg.fpn_channels;
        let p = cfg.fpn_pyramid;
        FpnLayout {
            enc: [
                conv_p(set, rng, "fpn.enc0", c2, cfg.in_channels, 3),
                conv_p(set, rng, "fpn.enc1", c4, c2, 3),
                conv_p(set, rng, "fpn.enc2", c8, c4, 3),
            ],
            top: conv_p(set, rng, "fpn.top", p, c8, 1),
            lat: [conv_p(set, rng, "fpn.lat2", p, c2, 1), conv_p(set, rng, "fpn.lat4", p, c4, 1)],
            smooth: [conv_p(set, rng, "fpn.smooth2", p, p, 3), conv_p(set, rng, "fpn.smooth4", p, p, 3)],
        }
    }

    /// `image [C,H,W]` with H, W divisible by 16.
    pub fn forward<E: Elem>(
        &self,
        tape: &Tape<E>,
        bound: &Bound<E>,
        image: &Tensor<E>,
    ) -> Result<FeaturePyramid<E>> {
        let (h, w) = (image.shape()[1], image.shape()[2]);
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::arg("fpn_forward", format!("size {}x{} not divisible by 16", h, w)));
        }
        // stride-2 stages as same-size conv + decimation
        let e0 = tape.leaky_relu(&tape.downsample2(&conv2(tape, bound, self.enc[0], image, 1, 1)?)?);
        let e1 = tape.leaky_relu(&tape.downsample2(&conv2(tape, bound, self.enc[1], &e0, 1, 1)?)?);
        let e2 = tape.leaky_relu(&tape.downsample2(&conv2(tape, bound, self.enc[2], &e1, 1, 1)?)?);

        let p8 = conv2(tape, bound, self.top, &e2, 1, 0)?;
        let up8 = tape.bilinear_resize(&p8, h / 4, w / 4)?;
        let l4 = conv2(tape, bound, self.lat[1], &e1, 1, 0)?;
        let p4 = conv2(tape, bound, self.smooth[1], &tape.add(&l4, &up8)?, 1, 1)?;
        let up4 = tape.bilinear_resize(&p4, h / 2, w / 2)?;
        let l2 = conv2(tape, bound, self.lat[0], &e0, 1, 0)?;
        let p2 = conv2(tape, bound, self.smooth[0], &tape.add(&l2, &up4)?, 1, 1)?;

        Ok(FeaturePyramid { s2: p2, s4: p4, s8: p8 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::bind;
    use crate::model::Model;

    #[test]
    fn pyramid_shapes_follow_strides() {
        let cfg = ModelConfig::tiny(8);
        let (model, params) = Model::build::<f64>(&cfg, 0);
        let tape = Tape::<f64>::new();
        let ext = bind(&tape, &params.extractor, false);
        let img = Tensor::<f64>::full(vec![3, 64, 128], 0.5);
        let pyr = model.fpn.forward(&tape, &ext, &img).unwrap();
        let p = cfg.fpn_pyramid;
        assert_eq!(pyr.s2.shape(), &[p, 32, 64]);
        assert_eq!(pyr.s4.shape(), &[p, 16, 32]);
        assert_eq!(pyr.s8.shape(), &[p, 8, 16]);
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let cfg = ModelConfig::tiny(8);
        let (model, mut params) = Model::build::<f64>(&cfg, 0);
        for e in params.extractor.entries.iter_mut() {
            for v in e.data.iter_mut() {
                *v = 0.0;
            }
        }
        let tape = Tape::<f64>::new();
        let ext = bind(&tape, &params.extractor, false);
        let img = Tensor::<f64>::full(vec![3, 16, 32], 0.7);
        let pyr = model.fpn.forward(&tape, &ext, &img).unwrap();
        assert!(pyr.s2.values().iter().all(|&v| v == 0.0));
        assert!(pyr.s4.values().iter().all(|&v| v == 0.0));
        assert!(pyr.s8.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_size_rejected() {
        let cfg = ModelConfig::tiny(8);
        let (model, params) = Model::build::<f64>(&cfg, 0);
        let tape = Tape::<f64>::new();
        let ext = bind(&tape, &params.extractor, false);
        let img = Tensor::<f64>::zeros(vec![3, 20, 32]);
        assert!(model.fpn.forward(&tape, &ext, &img).is_err());
    }
}
