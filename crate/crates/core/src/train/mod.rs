//! Dual-branch optimization loop: a standard branch supervised by
//! photometric consistency and smoothness, and an augmentation branch
//! supplying contrastive feature targets and disparity-consistency targets
//! through the momentum key encoder and the shared cost aggregation.

pub mod adamw;
pub mod checkpoint;
pub mod config;

pub use adamw::{adamw_step, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::TrainConfig;

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rand::Rng;

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::loss::{
    self, consistency_mask, disparity_diff_loss, infonce_loss, momentum_update, photometric_loss,
    queue_update, sample_pairs, smoothness_loss, total_loss, LossParts, MemoryQueue, MomentumState,
};
use crate::model::params::bind;
use crate::model::{Model, ModelParams};
use crate::rng;
use crate::synth::augment::{apply_augmentation, curriculum_ratio};
use crate::synth::generate::StereoSample;
use crate::synth::manifest::DatasetManifest;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Loss components and bookkeeping of one step, as logged to the metrics CSV.
#[derive(Clone, Debug)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_photo: f64,
    pub loss_smooth: f64,
    pub loss_flc: f64,
    pub loss_ild: f64,
    pub grad_norm: f64,
    pub occlusion_ratio: f64,
    pub skipped: bool,
}

pub const METRICS_HEADER: &str = "step,lr,loss_total,loss_photo,loss_smooth,loss_flc,loss_ild,grad_norm,occlusion_ratio";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.lr,
            self.loss_total,
            self.loss_photo,
            self.loss_smooth,
            self.loss_flc,
            self.loss_ild,
            self.grad_norm,
            self.occlusion_ratio
        )
    }
}

pub struct Trainer<E: Elem> {
    pub cfg: TrainConfig,
    pub model: Model,
    pub params: ModelParams<E>,
    pub momentum: MomentumState<E>,
    pub adam: AdamState<E>,
    pub queue: MemoryQueue<E>,
    pub step: u64,
    train_set: DatasetManifest,
}

impl<E: Elem> Trainer<E> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (model, params) = Model::build::<E>(&cfg.model_config(), cfg.seed);
        let momentum = MomentumState::init(&params.extractor, cfg.momentum)?;
        let lens: Vec<usize> = params.all_entries().map(|e| e.data.len()).collect();
        let adam = AdamState::new(&lens);
        let queue = MemoryQueue::new(cfg.contrastive.queue_capacity, model.cfg.out_channels[1]);
        let train_set = train_manifest(cfg)?;
        Ok(Trainer { cfg: cfg.clone(), model, params, momentum, adam, queue, step: 0, train_set })
    }

    pub fn from_checkpoint(cfg: &TrainConfig, path: &Path) -> Result<Self> {
        cfg.validate()?;
        let cp = load_checkpoint::<E>(path, cfg)?;
        let (model, _) = Model::build::<E>(&cfg.model_config(), cfg.seed);
        let train_set = train_manifest(cfg)?;
        Ok(Trainer {
            cfg: cfg.clone(),
            model,
            params: cp.params,
            momentum: cp.momentum,
            adam: cp.adam,
            queue: cp.queue,
            step: cp.step,
            train_set,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<E> {
        Checkpoint {
            step: self.step,
            params: self.params.clone(),
            momentum: MomentumState { params: self.momentum.params.clone_values(), momentum: self.momentum.momentum },
            adam: self.adam.clone(),
            queue: self.queue.clone(),
        }
    }

    fn batch_indices(&self) -> Vec<usize> {
        let mut r = rng::rng_from(rng::derive(self.cfg.seed, rng::Stream::Batch, self.step));
        (0..self.cfg.batch_size).map(|_| r.gen_range(0..self.train_set.len())).collect()
    }

    fn occlusion_ratio(&self) -> Result<f64> {
        if self.cfg.fixed_occlusion_ratio >= 0.0 {
            Ok(self.cfg.fixed_occlusion_ratio)
        } else {
            curriculum_ratio(self.step.min(self.cfg.total_steps), self.cfg.total_steps, self.cfg.curriculum_peak)
        }
    }

    /// One optimization step over a freshly drawn batch.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let cfg = self.cfg.clone();
        let w = cfg.weights;
        let use_photo = w.photo > 0.0;
        let use_smooth = w.smooth > 0.0;
        let use_flc = w.flc > 0.0;
        let use_ild = w.ild > 0.0;
        let ratio = self.occlusion_ratio()?;
        let lr = cfg.lr_at(self.step);

        let tape = Tape::<E>::new();
        let ext = bind(&tape, &self.params.extractor, true);
        let agg = bind(&tape, &self.params.aggregation, true);
        let key_ext = bind(&tape, &self.momentum.params, false);

        let zero = || Tensor::<E>::scalar(E::zero());
        let mut photo_sum = zero();
        let mut smooth_sum = zero();
        let mut flc_sum = zero();
        let mut ild_sum = zero();
        // queue updates are staged until after every draw of this step
        let mut pending_keys: Vec<(Tensor<E>, u64)> = Vec::new();

        let indices = self.batch_indices();
        for (bi, &idx) in indices.iter().enumerate() {
            let sample: StereoSample<E> = self.train_set.sample(idx)?;
            let sample_tag = self.step * cfg.batch_size as u64 + bi as u64;

            // standard branch
            let out_std = self.model.forward(&tape, &ext, &agg, &sample.left, &sample.right)?;
            if use_photo {
                let lp = photometric_loss(&tape, &sample.left, &sample.right, &out_std.full, None, w.ssim_alpha)?;
                photo_sum = tape.add(&photo_sum, &lp)?;
            }
            if use_smooth {
                let ls = smoothness_loss(&tape, &out_std.full, &sample.left)?;
                smooth_sum = tape.add(&smooth_sum, &ls)?;
            }

            if use_flc || use_ild {
                // augmentation branch through the momentum key encoder
                let mut aug_cfg = cfg.augment.clone();
                aug_cfg.occlusion_ratio = ratio;
                let aug = apply_augmentation(&sample, &aug_cfg, rng::derive(cfg.seed, rng::Stream::Augment, sample_tag))?;
                let (key_l, key_r) = self.model.extract(&tape, &key_ext, &aug.left, &aug.right)?;

                if use_flc {
                    let grid = (key_l.s4.shape()[1], key_l.s4.shape()[2]);
                    let plan_seed = rng::derive(cfg.seed, rng::Stream::Contrastive, sample_tag);
                    let plan = sample_pairs(grid, plan_seed, &cfg.contrastive)?;
                    let draw_seed = rng::derive(cfg.seed, rng::Stream::Queue, self.step);
                    let queue_vectors = self.queue.draw(cfg.contrastive.queue_draw, draw_seed);
                    let mut flc_pair = zero();
                    for (qf, kf) in [(&out_std.left_features.s4, &key_l.s4), (&out_std.right_features.s4, &key_r.s4)] {
                        let q = tape.l2_normalize_axis(&tape.gather_pixels(qf, &plan.anchors)?, 1, lit::<E>(1e-12))?;
                        let kpos = tape.l2_normalize_axis(&tape.gather_pixels(kf, &plan.positives)?, 1, lit::<E>(1e-12))?;
                        let flat: Vec<(usize, usize)> = plan.negatives.iter().flatten().copied().collect();
                        let knegs_flat = tape.l2_normalize_axis(&tape.gather_pixels(kf, &flat)?, 1, lit::<E>(1e-12))?;
                        let knegs = tape.reshape(
                            &knegs_flat,
                            vec![plan.anchors.len(), cfg.contrastive.negatives, qf.shape()[0]],
                        )?;
                        let l = infonce_loss(&tape, &q, &kpos, &knegs, &queue_vectors, cfg.contrastive.temperature)?;
                        flc_pair = tape.add(&flc_pair, &l)?;
                    }
                    flc_sum = tape.add(&flc_sum, &tape.mul_scalar(&flc_pair, lit::<E>(0.5)))?;
                    pending_keys.push((key_l.s4.detach(), sample_tag * 2));
                    pending_keys.push((key_r.s4.detach(), sample_tag * 2 + 1));
                }

                if use_ild {
                    // validity mask from two extra no-gradient forwards
                    let mask = loss::lr_valid_mask(&self.model, &self.params, &sample.left, &sample.right, cfg.tau_warp)?;
                    // augmented disparity through the shared (trainable) aggregation
                    let (_, _, full_aug) =
                        self.model.cascade(&tape, &agg, &key_l, &key_r, (sample.left.shape()[1], sample.left.shape()[2]))?;
                    let li = disparity_diff_loss(&tape, &full_aug, &out_std.full, &mask.mask)?;
                    ild_sum = tape.add(&ild_sum, &li)?;
                }
            }
        }

        let inv_b = E::one() / lit::<E>(cfg.batch_size as f64);
        let parts = LossParts {
            photo: tape.mul_scalar(&photo_sum, inv_b),
            smooth: tape.mul_scalar(&smooth_sum, inv_b),
            flc: tape.mul_scalar(&flc_sum, inv_b),
            ild: tape.mul_scalar(&ild_sum, inv_b),
        };
        let total = total_loss(&tape, &parts, &w)?;

        let mut metrics = StepMetrics {
            step: self.step,
            lr,
            loss_total: total.item()?.to_f64().unwrap(),
            loss_photo: parts.photo.item()?.to_f64().unwrap(),
            loss_smooth: parts.smooth.item()?.to_f64().unwrap(),
            loss_flc: parts.flc.item()?.to_f64().unwrap(),
            loss_ild: parts.ild.item()?.to_f64().unwrap(),
            grad_norm: 0.0,
            occlusion_ratio: ratio,
            skipped: false,
        };

        if !metrics.loss_total.is_finite() {
            warn!("step {}: non-finite total loss {}, skipping update", self.step, metrics.loss_total);
            metrics.skipped = true;
            self.step += 1;
            return Ok(metrics);
        }

        let grads_map = tape.backward(&total)?;
        let mut grads: Vec<Vec<E>> = Vec::with_capacity(ext.tensors.len() + agg.tensors.len());
        for t in ext.tensors.iter().chain(agg.tensors.iter()) {
            grads.push(grads_map.wrt(t)?);
        }

        let mut sq_sum = 0.0f64;
        for g in &grads {
            for v in g {
                sq_sum += v.to_f64().unwrap().powi(2);
            }
        }
        metrics.grad_norm = sq_sum.sqrt();
        if metrics.grad_norm > cfg.grad_clip && metrics.grad_norm > 0.0 {
            let scale = lit::<E>(cfg.grad_clip / metrics.grad_norm);
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v = *v * scale;
                }
            }
        }

        adamw_step(
            self.params.all_entries_mut(),
            &grads,
            &mut self.adam,
            AdamHyper { lr, beta1: cfg.beta1, beta2: cfg.beta2, weight_decay: cfg.weight_decay, eps: cfg.adam_eps },
        )?;
        momentum_update(&mut self.momentum, &self.params.extractor)?;
        for (features, tag) in pending_keys {
            queue_update(&mut self.queue, &features, cfg.contrastive.enqueue_per_image, rng::derive(cfg.seed, rng::Stream::Queue, 1_000_000 + tag))?;
        }

        tape.reset();
        self.step += 1;
        Ok(metrics)
    }
}

/// Training split: sequential seeds from `data_seed`.
pub fn train_manifest(cfg: &TrainConfig) -> Result<DatasetManifest> {
    DatasetManifest::new(
        std::path::PathBuf::new(),
        cfg.height,
        cfg.width,
        cfg.d_max,
        cfg.train_samples,
        cfg.data_seed,
    )
}

/// Held-out split: seeds continue where the training split ends.
pub fn holdout_manifest(cfg: &TrainConfig) -> Result<DatasetManifest> {
    DatasetManifest::new(
        std::path::PathBuf::new(),
        cfg.height,
        cfg.width,
        cfg.d_max,
        cfg.holdout_samples,
        cfg.data_seed.wrapping_add(cfg.train_samples as u64),
    )
}

pub struct FitOutcome<E: Elem> {
    pub trainer: Trainer<E>,
    pub metrics: Vec<StepMetrics>,
}

/// Run `total_steps` training steps from scratch (or resume a trainer),
/// optionally writing periodic checkpoints and the metrics CSV to `out_dir`.
pub fn fit<E: Elem>(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<FitOutcome<E>> {
    let trainer = Trainer::<E>::new(cfg)?;
    fit_from(trainer, out_dir)
}

pub fn fit_from<E: Elem>(mut trainer: Trainer<E>, out_dir: Option<&Path>) -> Result<FitOutcome<E>> {
    let cfg = trainer.cfg.clone();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut metrics = Vec::with_capacity((cfg.total_steps - trainer.step) as usize);
    while trainer.step < cfg.total_steps {
        let m = trainer.train_step()?;
        if m.step % 50 == 0 {
            info!(
                "step {} lr {:.2e} total {:.4} photo {:.4} smooth {:.4} flc {:.4} ild {:.4}",
                m.step, m.lr, m.loss_total, m.loss_photo, m.loss_smooth, m.loss_flc, m.loss_ild
            );
        }
        let at = m.step + 1;
        metrics.push(m);
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && at % cfg.checkpoint_every == 0 && at < cfg.total_steps {
                save_checkpoint(&dir.join(format!("checkpoint_{at}.bin")), &trainer.checkpoint(), &cfg)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("checkpoint_final.bin"), &trainer.checkpoint(), &cfg)?;
        let mut csv = String::from(METRICS_HEADER);
        csv.push('\n');
        for m in &metrics {
            let _ = writeln!(csv, "{}", m.csv_row());
        }
        let path = dir.join("metrics.csv");
        std::fs::write(&path, csv).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(FitOutcome { trainer, metrics })
}

/// Valid-mask construction re-exported at the step level for diagnostics.
pub fn valid_mask_for<E: Elem>(
    trainer: &Trainer<E>,
    sample: &StereoSample<E>,
) -> Result<loss::ValidMask<E>> {
    loss::lr_valid_mask(&trainer.model, &trainer.params, &sample.left, &sample.right, trainer.cfg.tau_warp)
}

/// Quick left-right agreement check on raw maps, used by tests.
pub fn mask_from_maps<E: Elem>(d_l: &Tensor<E>, d_r: &Tensor<E>, tau: f64) -> Result<loss::ValidMask<E>> {
    consistency_mask(d_l, d_r, tau)
}
