//! Dual-branch data augmentation: asymmetric photometric transforms, glass
//! and gaussian blur, and curriculum-scheduled occlusion masking of the left
//! view. Ground-truth fields pass through unchanged.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::generate::StereoSample;
use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Closed parameter ranges for one augmentation draw.
#[derive(Clone, Debug)]
pub struct AugmentationConfig {
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub gamma: (f64, f64),
    pub gaussian_sigma: (f64, f64),
    /// Max per-pixel displacement of the glass-blur corruption, in pixels.
    /// 0 disables it.
    pub glass_displacement: usize,
    /// Target masked fraction of the left image, in `[0, 0.25]`.
    pub occlusion_ratio: f64,
    /// Side length of each square occlusion patch.
    pub occlusion_patch: usize,
    /// Apply the photometric transforms to the right view only.
    pub asymmetric: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            brightness: (0.6, 1.4),
            contrast: (0.6, 1.4),
            gamma: (0.8, 1.2),
            gaussian_sigma: (0.0, 1.5),
            glass_displacement: 2,
            occlusion_ratio: 0.0,
            occlusion_patch: 8,
            asymmetric: true,
        }
    }
}

impl AugmentationConfig {
    /// Identity configuration: applying it reproduces the input bit-exactly.
    pub fn identity() -> Self {
        AugmentationConfig {
            brightness: (1.0, 1.0),
            contrast: (1.0, 1.0),
            gamma: (1.0, 1.0),
            gaussian_sigma: (0.0, 0.0),
            glass_displacement: 0,
            occlusion_ratio: 0.0,
            occlusion_patch: 8,
            asymmetric: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("gamma", self.gamma),
            ("gaussian_sigma", self.gaussian_sigma),
        ] {
            if lo > hi || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::arg("augmentation", format!("empty {name} range [{lo}, {hi}]")));
            }
        }
        if !(0.0..=0.25).contains(&self.occlusion_ratio) {
            return Err(Error::arg(
                "augmentation",
                format!("occlusion_ratio {} outside [0, 0.25]", self.occlusion_ratio),
            ));
        }
        if self.occlusion_patch == 0 {
            return Err(Error::arg("augmentation", "occlusion_patch must be >= 1".to_string()));
        }
        Ok(())
    }
}

fn draw(r: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        r.gen_range(range.0..range.1)
    }
}

struct Image {
    data: Vec<f64>, // [3,H,W]
    h: usize,
    w: usize,
}

impl Image {
    fn from_tensor<E: Elem>(t: &Tensor<E>) -> Image {
        Image { data: t.to_f64_vec(), h: t.shape()[1], w: t.shape()[2] }
    }

    fn to_tensor<E: Elem>(&self) -> Tensor<E> {
        let data = self.data.iter().map(|&v| lit::<E>(v.clamp(0.0, 1.0))).collect();
        Tensor::with_node(vec![3, self.h, self.w], data, None)
    }

    fn brightness(&mut self, b: f64) {
        if b == 1.0 {
            return;
        }
        for v in self.data.iter_mut() {
            *v *= b;
        }
    }

    /// Contrast around mid-gray.
    fn contrast(&mut self, c: f64) {
        if c == 1.0 {
            return;
        }
        for v in self.data.iter_mut() {
            *v = (*v - 0.5) * c + 0.5;
        }
    }

    fn gamma(&mut self, g: f64) {
        if g == 1.0 {
            return;
        }
        for v in self.data.iter_mut() {
            *v = v.max(0.0).powf(g);
        }
    }

    fn gaussian_blur(&mut self, sigma: f64) {
        if sigma <= 0.0 {
            return;
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        let mut sum = 0.0;
        for i in -radius..=radius {
            let v = (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp();
            kernel.push(v);
            sum += v;
        }
        for v in kernel.iter_mut() {
            *v /= sum;
        }
        let (h, w) = (self.h as i64, self.w as i64);
        for c in 0..3 {
            let plane = &mut self.data[c * self.h * self.w..(c + 1) * self.h * self.w];
            // horizontal then vertical, clamped edges
            let mut tmp = vec![0.0f64; plane.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (ki, kv) in kernel.iter().enumerate() {
                        let sx = (x + ki as i64 - radius).clamp(0, w - 1);
                        acc += kv * plane[(y * w + sx) as usize];
                    }
                    tmp[(y * w + x) as usize] = acc;
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (ki, kv) in kernel.iter().enumerate() {
                        let sy = (y + ki as i64 - radius).clamp(0, h - 1);
                        acc += kv * tmp[(sy * w + x) as usize];
                    }
                    plane[(y * w + x) as usize] = acc;
                }
            }
        }
    }

    /// Random per-pixel displacement within ±disp followed by 3x3 mean.
    fn glass_blur(&mut self, disp: usize, r: &mut ChaCha8Rng) {
        if disp == 0 {
            return;
        }
        let (h, w) = (self.h as i64, self.w as i64);
        let d = disp as i64;
        let mut jitter = Vec::with_capacity((h * w) as usize);
        for _ in 0..h * w {
            jitter.push((r.gen_range(-d..=d), r.gen_range(-d..=d)));
        }
        for c in 0..3 {
            let plane = &mut self.data[c * self.h * self.w..(c + 1) * self.h * self.w];
            let mut displaced = vec![0.0f64; plane.len()];
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = jitter[(y * w + x) as usize];
                    let sx = (x + dx).clamp(0, w - 1);
                    let sy = (y + dy).clamp(0, h - 1);
                    displaced[(y * w + x) as usize] = plane[(sy * w + sx) as usize];
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in -1..=1i64 {
                        let sy = (y + dy).clamp(0, h - 1);
                        for dx in -1..=1i64 {
                            let sx = (x + dx).clamp(0, w - 1);
                            acc += displaced[(sy * w + sx) as usize];
                        }
                    }
                    plane[(y * w + x) as usize] = acc / 9.0;
                }
            }
        }
    }

    /// Paint square patches of zeros until the masked fraction reaches
    /// `ratio`. Returns the painted mask.
    fn paint_occlusions(&mut self, ratio: f64, patch: usize, r: &mut ChaCha8Rng) -> Vec<bool> {
        let (h, w) = (self.h, self.w);
        let mut mask = vec![false; h * w];
        if ratio <= 0.0 || patch > h || patch > w {
            return mask;
        }
        let total = (h * w) as f64;
        let mut covered = 0usize;
        while (covered as f64) / total < ratio {
            let ty = r.gen_range(0..=h - patch);
            let tx = r.gen_range(0..=w - patch);
            for y in ty..ty + patch {
                for x in tx..tx + patch {
                    if !mask[y * w + x] {
                        mask[y * w + x] = true;
                        covered += 1;
                    }
                    for c in 0..3 {
                        self.data[c * h * w + y * w + x] = 0.0;
                    }
                }
            }
        }
        mask
    }
}

/// Apply one augmentation draw. Photometric transforms hit the right view
/// only when `cfg.asymmetric`; occlusion patches always hit the left view.
/// Output images are clamped to `[0,1]`; ground truth is copied unchanged.
pub fn apply_augmentation<E: Elem>(
    sample: &StereoSample<E>,
    cfg: &AugmentationConfig,
    rng_seed: u64,
) -> Result<StereoSample<E>> {
    cfg.validate()?;
    let mut r = rng::rng_from(rng::derive(rng_seed, rng::Stream::Augment, 0));
    let b = draw(&mut r, cfg.brightness);
    let c = draw(&mut r, cfg.contrast);
    let g = draw(&mut r, cfg.gamma);
    let sigma = draw(&mut r, cfg.gaussian_sigma);

    let mut left = Image::from_tensor(&sample.left);
    let mut right = Image::from_tensor(&sample.right);

    right.brightness(b);
    right.contrast(c);
    right.gamma(g);
    if !cfg.asymmetric {
        left.brightness(b);
        left.contrast(c);
        left.gamma(g);
    }
    left.gaussian_blur(sigma);
    right.gaussian_blur(sigma);
    left.glass_blur(cfg.glass_displacement, &mut r);
    right.glass_blur(cfg.glass_displacement, &mut r);
    left.paint_occlusions(cfg.occlusion_ratio, cfg.occlusion_patch, &mut r);

    Ok(StereoSample {
        left: left.to_tensor(),
        right: right.to_tensor(),
        gt_disparity: sample.gt_disparity.clone(),
        gt_occlusion: sample.gt_occlusion.clone(),
        seed: sample.seed,
    })
}

/// Occlusion-ratio curriculum: linear ramp from 0 at step 0 to `peak` at
/// `total_steps / 2`, constant afterwards.
pub fn curriculum_ratio(step: u64, total_steps: u64, peak: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::arg("curriculum_ratio", "total_steps must be >= 1".to_string()));
    }
    if step > total_steps {
        return Err(Error::arg(
            "curriculum_ratio",
            format!("step {} beyond total_steps {}", step, total_steps),
        ));
    }
    let half = total_steps / 2;
    if step >= half || half == 0 {
        Ok(peak)
    } else {
        Ok(peak * step as f64 / half as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate::generate_sample;

    #[test]
    fn identity_config_is_bit_exact() {
        let s = generate_sample::<f64>(3, 32, 64, 16).unwrap();
        let a = apply_augmentation(&s, &AugmentationConfig::identity(), 99).unwrap();
        assert_eq!(a.left.values(), s.left.values());
        assert_eq!(a.right.values(), s.right.values());
    }

    #[test]
    fn brightness_scales_mean() {
        let s = generate_sample::<f64>(4, 32, 64, 16).unwrap();
        let cfg = AugmentationConfig {
            brightness: (0.7, 0.7),
            ..AugmentationConfig::identity()
        };
        let a = apply_augmentation(&s, &cfg, 5).unwrap();
        let mean = |t: &crate::tensor::Tensor<f64>| t.values().iter().sum::<f64>() / t.len() as f64;
        // asymmetric: right view only
        assert!((mean(&a.right) - 0.7 * mean(&s.right)).abs() < 1e-9);
        assert_eq!(a.left.values(), s.left.values());
    }

    #[test]
    fn masked_fraction_hits_ratio_window() {
        let s = generate_sample::<f64>(5, 64, 128, 24).unwrap();
        let cfg = AugmentationConfig {
            occlusion_ratio: 0.15,
            occlusion_patch: 8,
            ..AugmentationConfig::identity()
        };
        let a = apply_augmentation(&s, &cfg, 17).unwrap();
        // count fully black pixels painted over the left view
        let (h, w) = (64, 128);
        let mut masked = 0usize;
        for y in 0..h {
            for x in 0..w {
                if (0..3).all(|c| a.left.at3(c, y, x) == 0.0) && !(0..3).all(|c| s.left.at3(c, y, x) == 0.0) {
                    masked += 1;
                }
            }
        }
        let frac = masked as f64 / (h * w) as f64;
        let slack = 64.0 / (h * w) as f64;
        assert!(frac >= 0.15 - slack && frac <= 0.15 + slack, "fraction {frac}");
    }

    #[test]
    fn augmentation_never_touches_ground_truth() {
        let s = generate_sample::<f64>(6, 32, 64, 16).unwrap();
        let cfg = AugmentationConfig { occlusion_ratio: 0.2, ..AugmentationConfig::default() };
        let a = apply_augmentation(&s, &cfg, 123).unwrap();
        assert_eq!(a.gt_disparity.values(), s.gt_disparity.values());
        assert_eq!(a.gt_occlusion.values(), s.gt_occlusion.values());
    }

    #[test]
    fn augmented_images_stay_in_unit_range() {
        let s = generate_sample::<f64>(8, 32, 64, 16).unwrap();
        let a = apply_augmentation(&s, &AugmentationConfig { occlusion_ratio: 0.1, ..Default::default() }, 7).unwrap();
        for &v in a.left.values().iter().chain(a.right.values()) {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn curriculum_endpoints_and_midpoint() {
        assert_eq!(curriculum_ratio(0, 4000, 0.15).unwrap(), 0.0);
        assert_eq!(curriculum_ratio(4000, 4000, 0.15).unwrap(), 0.15);
        assert_eq!(curriculum_ratio(2000, 4000, 0.15).unwrap(), 0.15);
        assert_eq!(curriculum_ratio(1000, 4000, 0.15).unwrap(), 0.075);
        assert!(curriculum_ratio(1, 0, 0.15).is_err());
    }

    #[test]
    fn same_seed_same_augmentation() {
        let s = generate_sample::<f64>(9, 32, 64, 16).unwrap();
        let cfg = AugmentationConfig { occlusion_ratio: 0.1, ..Default::default() };
        let a = apply_augmentation(&s, &cfg, 42).unwrap();
        let b = apply_augmentation(&s, &cfg, 42).unwrap();
        assert_eq!(a.left.values(), b.left.values());
        assert_eq!(a.right.values(), b.right.values());
    }
}
