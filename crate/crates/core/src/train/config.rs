//! Experiment configuration: a plain-text `key = value` file with dotted
//! keys and `#` comments. The canonical serialization (stable key order)
//! feeds the checkpoint digest, so a config change is detectable at load.

use crate::error::{Error, Result};
use crate::loss::{ContrastiveConfig, LossWeights};
use crate::model::ModelConfig;
use crate::synth::augment::AugmentationConfig;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub height: usize,
    pub width: usize,
    pub d_max: usize,
    pub stages: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub train_samples: usize,
    pub holdout_samples: usize,
    pub lr_initial: f64,
    /// the step-count fraction at which the rate decays once
    pub lr_decay_frac: f64,
    pub lr_decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub weights: LossWeights,
    pub contrastive: ContrastiveConfig,
    pub augment: AugmentationConfig,
    pub momentum: f64,
    pub curriculum_peak: f64,
    /// when >= 0, a constant occlusion ratio replaces the curriculum
    pub fixed_occlusion_ratio: f64,
    pub tau_warp: f64,
    pub groups: usize,
    pub cascade_radius: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            height: 64,
            width: 128,
            d_max: 32,
            stages: 2,
            batch_size: 2,
            total_steps: 2000,
            train_samples: 200,
            holdout_samples: 20,
            lr_initial: 1e-4,
            lr_decay_frac: 0.2,
            lr_decay_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            adam_eps: 1e-8,
            grad_clip: 5.0,
            weights: LossWeights::default(),
            contrastive: ContrastiveConfig::default(),
            augment: AugmentationConfig::default(),
            momentum: 0.999,
            curriculum_peak: 0.15,
            fixed_occlusion_ratio: -1.0,
            tau_warp: 3.0,
            groups: 8,
            cascade_radius: 4,
            seed: 0,
            data_seed: 9000,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::arg("train_config", "total_steps must be >= 1".to_string()));
        }
        if self.batch_size == 0 || self.train_samples == 0 {
            return Err(Error::arg("train_config", "batch_size and train_samples must be >= 1".to_string()));
        }
        if self.height % 16 != 0 || self.width % 16 != 0 {
            return Err(Error::arg(
                "train_config",
                format!("image size {}x{} must divide by 16", self.height, self.width),
            ));
        }
        if 2 * self.d_max >= self.width {
            return Err(Error::arg(
                "train_config",
                format!("d_max {} too large for width {}", self.d_max, self.width),
            ));
        }
        self.weights.validate()?;
        self.contrastive.validate()?;
        self.augment.validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("train_config", format!("momentum {} outside [0,1)", self.momentum)));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::standard(self.d_max, self.stages);
        m.groups = self.groups;
        m.cascade_radius = self.cascade_radius;
        m.base_grid = (self.height / m.patch, self.width / m.patch);
        m
    }

    /// Two-phase schedule: initial rate, multiplied once by the decay factor
    /// at `decay_frac * total_steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let decay_step = (self.total_steps as f64 * self.lr_decay_frac) as u64;
        if step >= decay_step {
            self.lr_initial * self.lr_decay_factor
        } else {
            self.lr_initial
        }
    }

    /// Stable serialization; also the digest input for checkpoints.
    pub fn to_canonical_string(&self) -> String {
        let w = &self.weights;
        let c = &self.contrastive;
        let a = &self.augment;
        format!(
            "aug.asymmetric = {}\n\
             aug.brightness.hi = {}\naug.brightness.lo = {}\n\
             aug.contrast.hi = {}\naug.contrast.lo = {}\n\
             aug.gamma.hi = {}\naug.gamma.lo = {}\n\
             aug.glass_displacement = {}\naug.occlusion_patch = {}\n\
             aug.sigma.hi = {}\naug.sigma.lo = {}\n\
             batch_size = {}\ncheckpoint.every = {}\n\
             contrastive.anchors = {}\ncontrastive.enqueue_per_image = {}\n\
             contrastive.jitter = {}\ncontrastive.negatives = {}\n\
             contrastive.queue_capacity = {}\ncontrastive.queue_draw = {}\n\
             contrastive.temperature = {}\ncontrastive.window = {}\n\
             curriculum.fixed_ratio = {}\ncurriculum.peak = {}\n\
             d_max = {}\ndata.seed = {}\nholdout_samples = {}\n\
             image.height = {}\nimage.width = {}\n\
             loss.flc = {}\nloss.ild = {}\nloss.photo = {}\nloss.smooth = {}\nloss.ssim_alpha = {}\n\
             lr.decay_factor = {}\nlr.decay_frac = {}\nlr.initial = {}\n\
             mask.tau_warp = {}\nmodel.cascade_radius = {}\nmodel.groups = {}\n\
             momentum.m = {}\noptim.beta1 = {}\noptim.beta2 = {}\noptim.eps = {}\noptim.grad_clip = {}\n\
             optim.weight_decay = {}\nseed = {}\nstages = {}\ntotal_steps = {}\ntrain_samples = {}\n",
            a.asymmetric,
            a.brightness.1, a.brightness.0,
            a.contrast.1, a.contrast.0,
            a.gamma.1, a.gamma.0,
            a.glass_displacement, a.occlusion_patch,
            a.gaussian_sigma.1, a.gaussian_sigma.0,
            self.batch_size, self.checkpoint_every,
            c.anchors, c.enqueue_per_image,
            c.jitter, c.negatives,
            c.queue_capacity, c.queue_draw,
            c.temperature, c.window,
            self.fixed_occlusion_ratio, self.curriculum_peak,
            self.d_max, self.data_seed, self.holdout_samples,
            self.height, self.width,
            w.flc, w.ild, w.photo, w.smooth, w.ssim_alpha,
            self.lr_decay_factor, self.lr_decay_frac, self.lr_initial,
            self.tau_warp, self.cascade_radius, self.groups,
            self.momentum, self.beta1, self.beta2, self.adam_eps, self.grad_clip,
            self.weight_decay, self.seed, self.stages, self.total_steps, self.train_samples,
        )
    }

    /// Parse a config file; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                what: "config",
                detail: format!("line {}: expected key = value, got {raw:?}", lineno + 1),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.set(key, value).map_err(|e| Error::Format {
                what: "config",
                detail: format!("line {}: {e}", lineno + 1),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn p<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value {v:?}"))
        }
        match key {
            "image.height" => self.height = p(value)?,
            "image.width" => self.width = p(value)?,
            "d_max" => self.d_max = p(value)?,
            "stages" => self.stages = p(value)?,
            "batch_size" => self.batch_size = p(value)?,
            "total_steps" => self.total_steps = p(value)?,
            "train_samples" => self.train_samples = p(value)?,
            "holdout_samples" => self.holdout_samples = p(value)?,
            "lr.initial" => self.lr_initial = p(value)?,
            "lr.decay_frac" => self.lr_decay_frac = p(value)?,
            "lr.decay_factor" => self.lr_decay_factor = p(value)?,
            "optim.beta1" => self.beta1 = p(value)?,
            "optim.beta2" => self.beta2 = p(value)?,
            "optim.weight_decay" => self.weight_decay = p(value)?,
            "optim.eps" => self.adam_eps = p(value)?,
            "optim.grad_clip" => self.grad_clip = p(value)?,
            "loss.photo" => self.weights.photo = p(value)?,
            "loss.smooth" => self.weights.smooth = p(value)?,
            "loss.flc" => self.weights.flc = p(value)?,
            "loss.ild" => self.weights.ild = p(value)?,
            "loss.ssim_alpha" => self.weights.ssim_alpha = p(value)?,
            "contrastive.negatives" => self.contrastive.negatives = p(value)?,
            "contrastive.queue_draw" => self.contrastive.queue_draw = p(value)?,
            "contrastive.temperature" => self.contrastive.temperature = p(value)?,
            "contrastive.anchors" => self.contrastive.anchors = p(value)?,
            "contrastive.jitter" => self.contrastive.jitter = p(value)?,
            "contrastive.window" => self.contrastive.window = p(value)?,
            "contrastive.queue_capacity" => self.contrastive.queue_capacity = p(value)?,
            "contrastive.enqueue_per_image" => self.contrastive.enqueue_per_image = p(value)?,
            "aug.brightness.lo" => self.augment.brightness.0 = p(value)?,
            "aug.brightness.hi" => self.augment.brightness.1 = p(value)?,
            "aug.contrast.lo" => self.augment.contrast.0 = p(value)?,
            "aug.contrast.hi" => self.augment.contrast.1 = p(value)?,
            "aug.gamma.lo" => self.augment.gamma.0 = p(value)?,
            "aug.gamma.hi" => self.augment.gamma.1 = p(value)?,
            "aug.sigma.lo" => self.augment.gaussian_sigma.0 = p(value)?,
            "aug.sigma.hi" => self.augment.gaussian_sigma.1 = p(value)?,
            "aug.glass_displacement" => self.augment.glass_displacement = p(value)?,
            "aug.occlusion_patch" => self.augment.occlusion_patch = p(value)?,
            "aug.asymmetric" => self.augment.asymmetric = p(value)?,
            "momentum.m" => self.momentum = p(value)?,
            "curriculum.peak" => self.curriculum_peak = p(value)?,
            "curriculum.fixed_ratio" => self.fixed_occlusion_ratio = p(value)?,
            "mask.tau_warp" => self.tau_warp = p(value)?,
            "model.groups" => self.groups = p(value)?,
            "model.cascade_radius" => self.cascade_radius = p(value)?,
            "seed" => self.seed = p(value)?,
            "data.seed" => self.data_seed = p(value)?,
            "checkpoint.every" => self.checkpoint_every = p(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_string_roundtrips_through_parse() {
        let mut cfg = TrainConfig::default();
        cfg.total_steps = 123;
        cfg.weights.flc = 0.0;
        cfg.seed = 7;
        let text = cfg.to_canonical_string();
        let back = TrainConfig::parse(&text).unwrap();
        assert_eq!(back.to_canonical_string(), text);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(TrainConfig::parse("bogus.key = 3\n").is_err());
    }

    #[test]
    fn comments_and_blanks_accepted() {
        let cfg = TrainConfig::parse("# experiment\n\ntotal_steps = 10 # short\n").unwrap();
        assert_eq!(cfg.total_steps, 10);
    }

    #[test]
    fn lr_schedule_two_phase() {
        let mut cfg = TrainConfig::default();
        cfg.total_steps = 1000;
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert_eq!(cfg.lr_at(199), 1e-4);
        assert!((cfg.lr_at(200) - 1e-5).abs() < 1e-18);
        assert!((cfg.lr_at(999) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn invalid_dimensions_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.height = 60;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.d_max = 64;
        assert!(cfg.validate().is_err());
    }
}
