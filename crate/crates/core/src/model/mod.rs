//! Dual-stream stereo network: convolutional pyramid plus toy transformer
//! with cross-view multi-layer attention, fused features, cascade cost
//! volumes, aggregation, and soft-argmax regression.

pub mod aggregate;
pub mod fpn;
pub mod fusion;
pub mod mla;
pub mod params;
pub mod regress;
pub mod vit;
pub mod volume;

use std::ops::Range;

pub use params::{bind, Bound, ModelParams};
pub use regress::{regress_disparity, DisparityMap, ProbabilityVolume};
pub use volume::{build_cost_volume, build_cost_volume_windowed, wta_disparity, CostVolume};

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Per-scale feature maps at strides {2, 4, 8}.
pub struct FeaturePyramid<E: Elem> {
    pub s2: Tensor<E>,
    pub s4: Tensor<E>,
    pub s8: Tensor<E>,
}

impl<E: Elem> FeaturePyramid<E> {
    pub fn at_stride(&self, stride: usize) -> Result<&Tensor<E>> {
        match stride {
            2 => Ok(&self.s2),
            4 => Ok(&self.s4),
            8 => Ok(&self.s8),
            s => Err(Error::arg("feature_pyramid", format!("no scale at stride {s}"))),
        }
    }
}

/// Architecture hyper-parameters. Arrays indexed by scale: strides [2, 4, 8].
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub fpn_channels: [usize; 3],
    pub fpn_pyramid: usize,
    pub out_channels: [usize; 3],
    pub vit_width: usize,
    pub vit_blocks: usize,
    pub vit_heads: usize,
    pub mlp_ratio: usize,
    pub patch: usize,
    /// positional-embedding grid; resized when the input grid differs
    pub base_grid: (usize, usize),
    pub groups: usize,
    pub stages: usize,
    pub cascade_radius: usize,
    pub d_max: usize,
    /// widths of the 3-D aggregation stack (a final 1-channel conv follows)
    pub agg_channels: [usize; 3],
}

impl ModelConfig {
    /// Desk-scale defaults: 4-block toy transformer stem (patch 8, width 64,
    /// 4 heads), 8 correlation groups, 2 cascade stages.
    pub fn standard(d_max: usize, stages: usize) -> ModelConfig {
        ModelConfig {
            in_channels: 3,
            fpn_channels: [16, 24, 32],
            fpn_pyramid: 24,
            out_channels: [16, 32, 32],
            vit_width: 64,
            vit_blocks: 4,
            vit_heads: 4,
            mlp_ratio: 2,
            patch: 8,
            base_grid: (8, 16),
            groups: 8,
            stages,
            cascade_radius: 4,
            d_max,
            agg_channels: [8, 8, 4],
        }
    }

    /// Miniature configuration for tests and gradient checks.
    pub fn tiny(d_max: usize) -> ModelConfig {
        ModelConfig {
            in_channels: 3,
            fpn_channels: [4, 6, 8],
            fpn_pyramid: 6,
            out_channels: [4, 8, 8],
            vit_width: 8,
            vit_blocks: 2,
            vit_heads: 2,
            mlp_ratio: 2,
            patch: 8,
            base_grid: (2, 6),
            groups: 2,
            stages: 2,
            cascade_radius: 1,
            d_max,
            agg_channels: [4, 4, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stages) {
            return Err(Error::arg("model_config", format!("stages {} outside 1..=3", self.stages)));
        }
        if self.d_max % 8 != 0 || self.d_max == 0 {
            return Err(Error::arg(
                "model_config",
                format!("d_max {} must be a positive multiple of 8", self.d_max),
            ));
        }
        for (i, &c) in self.out_channels.iter().enumerate() {
            if c % self.groups != 0 {
                return Err(Error::arg(
                    "model_config",
                    format!("out_channels[{i}] = {c} not divisible by {} groups", self.groups),
                ));
            }
        }
        if self.vit_width % self.vit_heads != 0 {
            return Err(Error::arg("model_config", "vit width not divisible by heads".to_string()));
        }
        Ok(())
    }

    fn stride_of_stage(&self, stage: usize) -> usize {
        8 >> stage
    }
}

/// Index ranges of the extractor sub-layouts within the extractor set.
#[derive(Clone, Debug)]
pub struct ExtractorSections {
    pub fpn: Range<usize>,
    pub vit: Range<usize>,
    pub mla: Range<usize>,
    pub fuse: Range<usize>,
}

/// Registered layout: parameter indices for every block. Parameter values
/// live separately in [`ModelParams`].
pub struct Model {
    pub cfg: ModelConfig,
    pub fpn: fpn::FpnLayout,
    pub vit: vit::VitLayout,
    pub mla: mla::MlaLayout,
    pub fuse: fusion::FuseLayout,
    pub agg: Vec<aggregate::AggLayout>,
    pub sections: ExtractorSections,
}

/// One full forward pass of the cascade.
pub struct ForwardOutput<E: Elem> {
    /// per-stage maps at their native scales, coarse to fine
    pub stage_maps: Vec<DisparityMap<E>>,
    pub probabilities: Vec<ProbabilityVolume<E>>,
    /// final map upsampled to input resolution, values in full-res pixels
    pub full: Tensor<E>,
    pub left_features: FeaturePyramid<E>,
    pub right_features: FeaturePyramid<E>,
}

impl Model {
    /// Register every layout and initialize parameters deterministically
    /// from `seed`.
    pub fn build<E: Elem>(cfg: &ModelConfig, seed: u64) -> (Model, ModelParams<E>) {
        cfg.validate().expect("invalid model config");
        let mut r = rng::rng_from(rng::derive(seed, rng::Stream::Init, 0));
        let mut ext = params::ParamSet::<E>::new();
        let fpn_start = ext.len();
        let fpn = fpn::FpnLayout::register(cfg, &mut ext, &mut r);
        let vit_start = ext.len();
        let vit = vit::VitLayout::register(cfg, &mut ext, &mut r);
        let mla_start = ext.len();
        let mla = mla::MlaLayout::register(cfg, &mut ext, &mut r);
        let fuse_start = ext.len();
        let fuse = fusion::FuseLayout::register(cfg, &mut ext, &mut r);
        let fuse_end = ext.len();

        let mut agg_set = params::ParamSet::<E>::new();
        let mut agg = Vec::with_capacity(cfg.stages);
        for stage in 0..cfg.stages {
            let scale_idx = 3 - 1 - stage; // stage 0 at stride 8 -> index 2
            let nc = cfg.out_channels[scale_idx];
            let in_ch = 2 * nc + cfg.groups;
            agg.push(aggregate::AggLayout::register(cfg, &mut agg_set, &mut r, stage, in_ch));
        }

        let model = Model {
            cfg: cfg.clone(),
            fpn,
            vit,
            mla,
            fuse,
            agg,
            sections: ExtractorSections {
                fpn: fpn_start..vit_start,
                vit: vit_start..mla_start,
                mla: mla_start..fuse_start,
                fuse: fuse_start..fuse_end,
            },
        };
        let params = ModelParams { extractor: ext, aggregation: agg_set, version: params::PARAMS_VERSION };
        (model, params)
    }

    /// Run the feature extractor on a stereo pair: FPN and transformer taps
    /// per view, cross-view attention over the taps, then fusion.
    pub fn extract<E: Elem>(
        &self,
        tape: &Tape<E>,
        ext: &Bound<E>,
        left: &Tensor<E>,
        right: &Tensor<E>,
    ) -> Result<(FeaturePyramid<E>, FeaturePyramid<E>)> {
        let fpn_l = self.fpn.forward(tape, ext, left)?;
        let fpn_r = self.fpn.forward(tape, ext, right)?;
        let taps_l = self.vit.forward(tape, ext, &self.cfg, left)?;
        let taps_r = self.vit.forward(tape, ext, &self.cfg, right)?;
        let (agg_l, agg_r) = self.mla.forward(tape, ext, &taps_l.layers, &taps_r.layers)?;
        let grid = (taps_l.grid_h, taps_l.grid_w);
        let pyr_l = self.fuse.forward(tape, ext, &self.cfg, &fpn_l, &agg_l, grid)?;
        let pyr_r = self.fuse.forward(tape, ext, &self.cfg, &fpn_r, &agg_r, grid)?;
        Ok((pyr_l, pyr_r))
    }

    /// Cascade from already-extracted feature pyramids. `agg` may be bound
    /// trainable while the pyramids come from a frozen extractor (the
    /// augmented branch).
    pub fn cascade<E: Elem>(
        &self,
        tape: &Tape<E>,
        agg: &Bound<E>,
        pyr_l: &FeaturePyramid<E>,
        pyr_r: &FeaturePyramid<E>,
        full_size: (usize, usize),
    ) -> Result<(Vec<DisparityMap<E>>, Vec<ProbabilityVolume<E>>, Tensor<E>)> {
        let cfg = &self.cfg;
        let mut maps: Vec<DisparityMap<E>> = Vec::with_capacity(cfg.stages);
        let mut probs = Vec::with_capacity(cfg.stages);
        for stage in 0..cfg.stages {
            let stride = cfg.stride_of_stage(stage);
            let fl = pyr_l.at_stride(stride)?;
            let fr = pyr_r.at_stride(stride)?;
            let budget = cfg.d_max / stride;
            if stage == 0 {
                let vol = build_cost_volume(tape, fl, fr, 0, budget, cfg.groups)?;
                let p = self.agg[0].forward(tape, agg, &vol)?;
                let d = regress_disparity(tape, &p)?;
                maps.push(DisparityMap { values: d, stride });
                probs.push(p);
            } else {
                let prev = &maps[stage - 1];
                let (hs, ws) = (fl.shape()[1], fl.shape()[2]);
                let up = tape.reshape(
                    &tape.bilinear_resize(
                        &tape.reshape(&prev.values, vec![1, prev.values.shape()[0], prev.values.shape()[1]])?,
                        hs,
                        ws,
                    )?,
                    vec![hs, ws],
                )?;
                let base = tape.clamp(
                    &tape.mul_scalar(&up, lit::<E>(2.0)),
                    E::zero(),
                    lit::<E>((budget - 1) as f64),
                );
                let vol = build_cost_volume_windowed(tape, fl, fr, &base, cfg.cascade_radius, cfg.groups, stage)?;
                let p = self.agg[stage].forward(tape, agg, &vol)?;
                let offset = regress_disparity(tape, &p)?;
                let d = tape.clamp(&tape.add(&base, &offset)?, E::zero(), lit::<E>(budget as f64));
                maps.push(DisparityMap { values: d, stride });
                probs.push(p);
            }
        }
        let finest = maps.last().unwrap();
        let (fh, fw) = (finest.values.shape()[0], finest.values.shape()[1]);
        let up =
            tape.bilinear_resize(&tape.reshape(&finest.values, vec![1, fh, fw])?, full_size.0, full_size.1)?;
        let full = tape.mul_scalar(
            &tape.reshape(&up, vec![full_size.0, full_size.1])?,
            lit::<E>(finest.stride as f64),
        );
        Ok((maps, probs, full))
    }

    /// Full forward pass on a stereo pair.
    pub fn forward<E: Elem>(
        &self,
        tape: &Tape<E>,
        ext: &Bound<E>,
        agg: &Bound<E>,
        left: &Tensor<E>,
        right: &Tensor<E>,
    ) -> Result<ForwardOutput<E>> {
        let (pyr_l, pyr_r) = self.extract(tape, ext, left, right)?;
        let full_size = (left.shape()[1], left.shape()[2]);
        let (stage_maps, probabilities, full) = self.cascade(tape, agg, &pyr_l, &pyr_r, full_size)?;
        Ok(ForwardOutput { stage_maps, probabilities, full, left_features: pyr_l, right_features: pyr_r })
    }

    /// No-gradient inference: fresh tape, frozen parameters. Returns the
    /// full-resolution disparity map in pixels.
    pub fn infer<E: Elem>(
        &self,
        p: &ModelParams<E>,
        left: &Tensor<E>,
        right: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let tape = Tape::<E>::new();
        let ext = bind(&tape, &p.extractor, false);
        let agg = bind(&tape, &p.aggregation, false);
        let out = self.forward(&tape, &ext, &agg, left, right)?;
        Ok(out.full.detach())
    }

    /// Parameter entries registered by the first `stage + 1` aggregation
    /// stages (each stage registers 4 convolutions = 8 entries).
    pub fn agg_stage_len(&self, stage: usize) -> usize {
        8 * (stage + 1)
    }
}

/// Pipeline-level gradient checks: each block probed end to end at a
/// miniature configuration.
pub fn gradcheck_entries() -> Vec<crate::gradcheck::suite::SuiteEntry> {
    use crate::gradcheck::grad_check;
    use crate::gradcheck::suite::{pack, rand_t, seeded, unpack_offsets, SuiteEntry, DEFAULT_EPS};

    fn live_bound(
        tape: &Tape<f64>,
        point: &Tensor<f64>,
        offset: &mut usize,
        set: &params::ParamSet<f64>,
        live: Range<usize>,
    ) -> Result<Bound<f64>> {
        let mut tensors = Vec::with_capacity(set.entries.len());
        for (i, e) in set.entries.iter().enumerate() {
            if live.contains(&i) {
                let n: usize = e.shape.iter().product();
                let part = tape.narrow(point, 0, *offset, n)?;
                tensors.push(tape.reshape(&part, e.shape.clone())?);
                *offset += n;
            } else {
                tensors.push(Tensor::with_node(e.shape.clone(), e.data.clone(), None));
            }
        }
        Ok(Bound { tensors, trainable: true })
    }

    fn pack_live(set: &params::ParamSet<f64>, live: Range<usize>) -> Vec<f64> {
        let mut out = Vec::new();
        for i in live {
            out.extend_from_slice(&set.entries[i].data);
        }
        out
    }

    let mut v = Vec::new();

    v.push(SuiteEntry::new("fpn_forward", || {
        let cfg = ModelConfig::tiny(8);
        let (model, p) = Model::build::<f64>(&cfg, 100);
        let mut r = seeded(200);
        let img = rand_t(&mut r, &[3, 16, 32], 0.0, 1.0);
        let mut point_v = img.values().to_vec();
        point_v.extend(pack_live(&p.extractor, model.sections.fpn.clone()));
        let point = Tensor::from_vec(vec![point_v.len()], point_v)?;
        let live = model.sections.fpn.clone();
        let f = move |t: &Tape<f64>, x: &Tensor<f64>| {
            let img_part = t.reshape(&t.narrow(x, 0, 0, 3 * 16 * 32)?, vec![3, 16, 32])?;
            let mut off = 3 * 16 * 32;
            let ext = live_bound(t, x, &mut off, &p.extractor, live.clone())?;
            let pyr = model.fpn.forward(t, &ext, &img_part)?;
            let a = t.mean_all(&t.mul(&pyr.s2, &pyr.s2)?);
            let b = t.mean_all(&t.mul(&pyr.s4, &pyr.s4)?);
            let c = t.mean_all(&t.mul(&pyr.s8, &pyr.s8)?);
            t.add(&t.add(&a, &b)?, &c)
        };
        grad_check("fpn_forward", f, &point, DEFAULT_EPS, 24, 4000)
    }));

    v.push(SuiteEntry::new("toy_vit_forward", || {
        let cfg = ModelConfig::tiny(8);
        let (model, p) = Model::build::<f64>(&cfg, 101);
        let mut r = seeded(201);
        let img = rand_t(&mut r, &[3, 16, 32], 0.0, 1.0);
        let mut point_v = img.values().to_vec();
        point_v.extend(pack_live(&p.extractor, model.sections.vit.clone()));
        let point = Tensor::from_vec(vec![point_v.len()], point_v)?;
        let live = model.sections.vit.clone();
        let f = move |t: &Tape<f64>, x: &Tensor<f64>| {
            let img_part = t.reshape(&t.narrow(x, 0, 0, 3 * 16 * 32)?, vec![3, 16, 32])?;
            let mut off = 3 * 16 * 32;
            let ext = live_bound(t, x, &mut off, &p.extractor, live.clone())?;
            let taps = model.vit.forward(t, &ext, &cfg, &img_part)?;
            let mut loss = Tensor::scalar(0.0);
            for tap in &taps.layers {
                loss = t.add(&loss, &t.mean_all(&t.mul(tap, tap)?))?;
            }
            Ok(loss)
        };
        grad_check("toy_vit_forward", f, &point, DEFAULT_EPS, 24, 4001)
    }));

    v.push(SuiteEntry::new("mla_stack", || {
        let cfg = ModelConfig::tiny(8);
        let (model, p) = Model::build::<f64>(&cfg, 102);
        let mut r = seeded(202);
        let t_tokens = 8usize;
        let taps_l: Vec<Tensor<f64>> =
            (0..cfg.vit_blocks).map(|_| rand_t(&mut r, &[t_tokens, cfg.vit_width], -0.5, 0.5)).collect();
        let taps_r: Vec<Tensor<f64>> =
            (0..cfg.vit_blocks).map(|_| rand_t(&mut r, &[t_tokens, cfg.vit_width], -0.5, 0.5)).collect();
        let mut point_v = Vec::new();
        for t in taps_l.iter().chain(&taps_r) {
            point_v.extend_from_slice(t.values());
        }
        point_v.extend(pack_live(&p.extractor, model.sections.mla.clone()));
        let point = Tensor::from_vec(vec![point_v.len()], point_v)?;
        let live = model.sections.mla.clone();
        let blocks = cfg.vit_blocks;
        let width = cfg.vit_width;
        let f = move |t: &Tape<f64>, x: &Tensor<f64>| {
            let tap_len = t_tokens * width;
            let mut taps_l = Vec::new();
            let mut taps_r = Vec::new();
            for i in 0..blocks {
                taps_l.push(t.reshape(&t.narrow(x, 0, i * tap_len, tap_len)?, vec![t_tokens, width])?);
            }
            for i in 0..blocks {
                taps_r.push(t.reshape(&t.narrow(x, 0, (blocks + i) * tap_len, tap_len)?, vec![t_tokens, width])?);
            }
            let mut off = 2 * blocks * tap_len;
            let ext = live_bound(t, x, &mut off, &p.extractor, live.clone())?;
            let (al, ar) = model.mla.forward(t, &ext, &taps_l, &taps_r)?;
            let a = t.mean_all(&t.mul(&al, &al)?);
            let b = t.mean_all(&t.mul(&ar, &ar)?);
            t.add(&a, &b)
        };
        grad_check("mla_stack", f, &point, DEFAULT_EPS, 24, 4002)
    }));

    v.push(SuiteEntry::new("fuse_and_decode", || {
        let cfg = ModelConfig::tiny(8);
        let (model, p) = Model::build::<f64>(&cfg, 103);
        let mut r = seeded(203);
        // pyramid at a 16x32 input: strides 2,4,8
        let s2 = rand_t(&mut r, &[cfg.fpn_pyramid, 8, 16], -0.5, 0.5);
        let s4 = rand_t(&mut r, &[cfg.fpn_pyramid, 4, 8], -0.5, 0.5);
        let s8 = rand_t(&mut r, &[cfg.fpn_pyramid, 2, 4], -0.5, 0.5);
        let tokens = rand_t(&mut r, &[2 * 4, cfg.vit_width], -0.5, 0.5);
        let inputs = pack(&[&s2, &s4, &s8, &tokens]);
        let mut point_v = inputs.values().to_vec();
        point_v.extend(pack_live(&p.extractor, model.sections.fuse.clone()));
        let point = Tensor::from_vec(vec![point_v.len()], point_v)?;
        let live = model.sections.fuse.clone();
        let pyr_shapes: Vec<Vec<usize>> = vec![
            vec![cfg.fpn_pyramid, 8, 16],
            vec![cfg.fpn_pyramid, 4, 8],
            vec![cfg.fpn_pyramid, 2, 4],
            vec![8, cfg.vit_width],
        ];
        let cfg2 = cfg.clone();
        let f = move |t: &Tape<f64>, x: &Tensor<f64>| {
            let (parts, mut off) = unpack_offsets(t, x, &pyr_shapes)?;
            let ext = live_bound(t, x, &mut off, &p.extractor, live.clone())?;
            let pyr = FeaturePyramid { s2: parts[0].clone(), s4: parts[1].clone(), s8: parts[2].clone() };
            let fused = model.fuse.forward(t, &ext, &cfg2, &pyr, &parts[3], (2, 4))?;
            let a = t.mean_all(&t.mul(&fused.s2, &fused.s2)?);
            let b = t.mean_all(&t.mul(&fused.s4, &fused.s4)?);
            let c = t.mean_all(&t.mul(&fused.s8, &fused.s8)?);
            t.add(&t.add(&a, &b)?, &c)
        };
        grad_check("fuse_and_decode", f, &point, DEFAULT_EPS, 24, 4003)
    }));

    v.push(SuiteEntry::new("aggregate_cost", || {
        let cfg = ModelConfig::tiny(8);
        let (model, p) = Model::build::<f64>(&cfg, 104);
        let mut r = seeded(204);
        let in_ch = 2 * cfg.out_channels[2] + cfg.groups;
        // (D,H,W) = (4,6,8) per the volume contract example
        let vol = rand_t(&mut r, &[in_ch, 4, 6, 8], -0.5, 0.5);
        let mut point_v = vol.values().to_vec();
        point_v.extend(pack_live(&p.aggregation, 0..model.agg_stage_len(0)));
        let point = Tensor::from_vec(vec![point_v.len()], point_v)?;
        let live = 0..model.agg_stage_len(0);
        let f = move |t: &Tape<f64>, x: &Tensor<f64>| {
            let n = in_ch * 4 * 6 * 8;
            let vol_t = t.reshape(&t.narrow(x, 0, 0, n)?, vec![in_ch, 4, 6, 8])?;
            let mut off = n;
            let agg = live_bound(t, x, &mut off, &p.aggregation, live.clone())?;
            let cv = CostVolume {
                values: vol_t,
                d_min: 0,
                d_max: 4,
                stage: 0,
                feat_channels: cfg.out_channels[2],
                groups: cfg.groups,
            };
            let prob = model.agg[0].forward(t, &agg, &cv)?;
            let d = regress_disparity(t, &prob)?;
            Ok(t.mean_all(&t.mul(&d, &d)?))
        };
        grad_check("aggregate_cost", f, &point, DEFAULT_EPS, 24, 4004)
    }));

    v.push(SuiteEntry::new("full_forward", || {
        let cfg = ModelConfig::tiny(16);
        let (model, p) = Model::build::<f64>(&cfg, 105);
        let mut r = seeded(205);
        let left = rand_t(&mut r, &[3, 16, 48], 0.0, 1.0);
        let right = rand_t(&mut r, &[3, 16, 48], 0.0, 1.0);
        let mut point_v = left.values().to_vec();
        point_v.extend_from_slice(right.values());
        point_v.extend(pack_live(&p.extractor, 0..p.extractor.len()));
        point_v.extend(pack_live(&p.aggregation, 0..p.aggregation.len()));
        let point = Tensor::from_vec(vec![point_v.len()], point_v)?;
        let ext_len = p.extractor.len();
        let agg_len = p.aggregation.len();
        let f = move |t: &Tape<f64>, x: &Tensor<f64>| {
            let n = 3 * 16 * 48;
            let l = t.reshape(&t.narrow(x, 0, 0, n)?, vec![3, 16, 48])?;
            let rr = t.reshape(&t.narrow(x, 0, n, n)?, vec![3, 16, 48])?;
            let mut off = 2 * n;
            let ext = live_bound(t, x, &mut off, &p.extractor, 0..ext_len)?;
            let agg = live_bound(t, x, &mut off, &p.aggregation, 0..agg_len)?;
            let out = model.forward(t, &ext, &agg, &l, &rr)?;
            Ok(t.mean_all(&t.mul(&out.full, &out.full)?))
        };
        grad_check("full_forward", f, &point, DEFAULT_EPS, 16, 4005)
    }));

    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate::generate_sample;

    #[test]
    fn forward_shapes_and_determinism() {
        let cfg = ModelConfig::tiny(16);
        let (model, p) = Model::build::<f64>(&cfg, 9);
        let s = generate_sample::<f64>(3, 16, 48, 16).unwrap();
        let a = model.infer(&p, &s.left, &s.right).unwrap();
        let b = model.infer(&p, &s.left, &s.right).unwrap();
        assert_eq!(a.shape(), &[16, 48]);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn stage_maps_follow_strides() {
        let cfg = ModelConfig::standard(32, 2);
        let (model, p) = Model::build::<f32>(&cfg, 10);
        let s = generate_sample::<f32>(4, 64, 128, 32).unwrap();
        let tape = Tape::<f32>::new();
        let ext = bind(&tape, &p.extractor, false);
        let agg = bind(&tape, &p.aggregation, false);
        let out = model.forward(&tape, &ext, &agg, &s.left, &s.right).unwrap();
        assert_eq!(out.stage_maps.len(), 2);
        assert_eq!(out.stage_maps[0].stride, 8);
        assert_eq!(out.stage_maps[0].values.shape(), &[8, 16]);
        assert_eq!(out.stage_maps[1].stride, 4);
        assert_eq!(out.stage_maps[1].values.shape(), &[16, 32]);
        assert_eq!(out.full.shape(), &[64, 128]);
        for p in &out.probabilities {
            assert!(p.normalization_error() < 1e-5);
        }
        for &v in out.full.values() {
            assert!((0.0..=32.0).contains(&v));
        }
    }

    #[test]
    fn single_stage_matches_full_range_path() {
        let cfg = ModelConfig { stages: 1, ..ModelConfig::tiny(16) };
        let (model, p) = Model::build::<f64>(&cfg, 11);
        let s = generate_sample::<f64>(5, 16, 48, 16).unwrap();
        let d = model.infer(&p, &s.left, &s.right).unwrap();
        assert_eq!(d.shape(), &[16, 48]);
    }

    fn zero_gradient_blocks(stages: usize) -> Vec<String> {
        let cfg = ModelConfig { stages, ..ModelConfig::tiny(16) };
        let (model, p) = Model::build::<f64>(&cfg, 12);
        let s = generate_sample::<f64>(6, 16, 48, 16).unwrap();
        let tape = Tape::<f64>::new();
        let ext = bind(&tape, &p.extractor, true);
        let agg = bind(&tape, &p.aggregation, true);
        let out = model.forward(&tape, &ext, &agg, &s.left, &s.right).unwrap();
        let loss = tape.mean_all(&tape.mul(&out.full, &out.full).unwrap());
        let grads = tape.backward(&loss).unwrap();
        let mut zero_blocks = Vec::new();
        for (i, t) in ext.tensors.iter().enumerate() {
            let g = grads.wrt(t).unwrap();
            if g.iter().all(|&v| v == 0.0) {
                zero_blocks.push(p.extractor.entries[i].name.clone());
            }
        }
        for (i, t) in agg.tensors.iter().enumerate() {
            let g = grads.wrt(t).unwrap();
            if g.iter().all(|&v| v == 0.0) {
                zero_blocks.push(p.aggregation.entries[i].name.clone());
            }
        }
        zero_blocks
    }

    #[test]
    fn every_parameter_block_receives_gradient_at_three_stages() {
        let dead = zero_gradient_blocks(3);
        assert!(dead.is_empty(), "dead parameter blocks: {dead:?}");
    }

    #[test]
    fn two_stage_cascade_leaves_only_the_stride2_head_unused() {
        let dead = zero_gradient_blocks(2);
        for name in &dead {
            assert!(
                name.contains("lat2") || name.contains("smooth2") || name.contains("out2") || name.contains("proj42"),
                "unexpected dead block {name}"
            );
        }
    }
}
