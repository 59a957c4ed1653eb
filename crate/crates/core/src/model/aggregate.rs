//! Cost aggregation: a short 3-D convolutional stack over `(D, H, W)` that
//! reduces the volume channels to one, followed by a softmax over the
//! disparity axis.

use rand_chacha::ChaCha8Rng;

use super::params::{conv3_p, Bound, ConvP, ParamSet};
use super::regress::ProbabilityVolume;
use super::volume::CostVolume;
use super::ModelConfig;
use crate::elem::Elem;
use crate::error::Result;
use crate::tape::Tape;

#[derive(Clone, Debug)]
pub struct AggLayout {
    convs: Vec<ConvP>,
}

impl AggLayout {
    pub fn register<E: Elem>(
        cfg: &ModelConfig,
        set: &mut ParamSet<E>,
        rng: &mut ChaCha8Rng,
        stage: usize,
        in_channels: usize,
    ) -> AggLayout {
        let widths = [cfg.agg_channels[0], cfg.agg_channels[1], cfg.agg_channels[2], 1];
        let mut convs = Vec::with_capacity(widths.len());
        let mut cin = in_channels;
        for (i, &cout) in widths.iter().enumerate() {
            convs.push(conv3_p(set, rng, &format!("agg{stage}.c{i}"), cout, cin, 3));
            cin = cout;
        }
        AggLayout { convs }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &Tape<E>,
        bound: &Bound<E>,
        volume: &CostVolume<E>,
    ) -> Result<ProbabilityVolume<E>> {
        let mut x = volume.values.clone();
        let last = self.convs.len() - 1;
        for (i, c) in self.convs.iter().enumerate() {
            x = tape.conv3d(&x, bound.get(c.w), bound.get(c.b), 1)?;
            if i != last {
                x = tape.leaky_relu(&x);
            }
        }
        // [1, D, H, W] -> [D, H, W], softmax over the disparity axis
        let shape = x.shape().to_vec();
        let logits = tape.reshape(&x, vec![shape[1], shape[2], shape[3]])?;
        let probs = tape.softmax_axis(&logits, 0)?;
        Ok(ProbabilityVolume { values: probs, d_min: volume.d_min, d_max: volume.d_max })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::bind;
    use crate::model::volume::build_cost_volume;
    use crate::model::Model;
    use crate::tensor::Tensor;

    fn rand_features(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        Tensor::from_vec(vec![c, h, w], (0..c * h * w).map(|_| next()).collect()).unwrap()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let cfg = ModelConfig::tiny(8);
        let (model, params) = Model::build::<f64>(&cfg, 11);
        let tape = Tape::<f64>::new();
        let agg = bind(&tape, &params.aggregation, false);
        let fl = rand_features(cfg.out_channels[2], 3, 8, 1);
        let fr = rand_features(cfg.out_channels[2], 3, 8, 2);
        let vol = build_cost_volume(&tape, &fl, &fr, 0, 4, cfg.groups).unwrap();
        let p = model.agg[0].forward(&tape, &agg, &vol).unwrap();
        assert!(p.normalization_error() < 1e-6);
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let cfg = ModelConfig::tiny(8);
        let (model, mut params) = Model::build::<f64>(&cfg, 12);
        for e in params.aggregation.entries.iter_mut() {
            for v in e.data.iter_mut() {
                *v = 0.0;
            }
        }
        let tape = Tape::<f64>::new();
        let agg = bind(&tape, &params.aggregation, false);
        let fl = rand_features(cfg.out_channels[2], 2, 6, 3);
        let fr = rand_features(cfg.out_channels[2], 2, 6, 4);
        let vol = build_cost_volume(&tape, &fl, &fr, 0, 3, cfg.groups).unwrap();
        let p = model.agg[0].forward(&tape, &agg, &vol).unwrap();
        for &v in p.values.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}
