//! Deterministic synthetic stereograms with exact ground truth.
//!
//! A scene is a textured background plus a handful of textured object layers
//! at integer disparities (nearer = larger disparity). The right view is
//! rendered first; the left view follows by forward reprojection with
//! z-ordering, and occlusion marks left pixels whose source is hidden in the
//! right view. Textures travel with their layer, so on co-visible pixels the
//! photometric match is exact by construction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Rectified stereo pair with ground truth, pre-augmentation.
#[derive(Clone)]
pub struct StereoSample<E: Elem> {
    /// Left image `[3,H,W]` in `[0,1]`.
    pub left: Tensor<E>,
    /// Right image `[3,H,W]` in `[0,1]`.
    pub right: Tensor<E>,
    /// Left-referenced disparity in pixels, `[H,W]`.
    pub gt_disparity: Tensor<E>,
    /// `[H,W]`, 1 where the pixel is visible in both views.
    pub gt_occlusion: Tensor<E>,
    pub seed: u64,
}

impl<E: Elem> StereoSample<E> {
    pub fn height(&self) -> usize {
        self.left.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.left.shape()[2]
    }
}

enum Shape {
    Rect { cx: f64, cy: f64, a: f64, b: f64 },
    Ellipse { cx: f64, cy: f64, a: f64, b: f64 },
}

impl Shape {
    fn covers(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { cx, cy, a, b } => (x - cx).abs() <= a && (y - cy).abs() <= b,
            Shape::Ellipse { cx, cy, a, b } => {
                let dx = (x - cx) / a;
                let dy = (y - cy) / b;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

struct Layer {
    shape: Option<Shape>, // None = background (covers everything)
    disparity: usize,
    /// `[3, H, W + d_max]` texture indexed by left-frame coordinates.
    texture: Vec<f64>,
}

/// iid noise smoothed once, then min-max stretched per channel to keep the
/// contrast the smoothing removed.
fn texture(r: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let mut tex = vec![0.0f64; 3 * h * w];
    for v in tex.iter_mut() {
        *v = r.gen_range(0.0..1.0);
    }
    let mut sm = vec![0.0f64; 3 * h * w];
    for c in 0..3 {
        let src = &tex[c * h * w..(c + 1) * h * w];
        let dst = &mut sm[c * h * w..(c + 1) * h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = 0.0;
                for dy in -1..=1i64 {
                    let sy = (y + dy).clamp(0, h as i64 - 1) as usize;
                    for dx in -1..=1i64 {
                        let sx = (x + dx).clamp(0, w as i64 - 1) as usize;
                        acc += src[sy * w + sx];
                    }
                }
                dst[(y as usize) * w + x as usize] = acc / 9.0;
            }
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in dst.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = (hi - lo).max(1e-9);
        for v in dst.iter_mut() {
            *v = 0.05 + 0.9 * (*v - lo) / span;
        }
    }
    sm
}

/// Generate one sample. Deterministic in `(seed, h, w, d_max)`.
pub fn generate_sample<E: Elem>(seed: u64, h: usize, w: usize, d_max: usize) -> Result<StereoSample<E>> {
    if d_max < 4 {
        return Err(Error::arg("generate_sample", format!("d_max {} too small (need >= 4)", d_max)));
    }
    if 2 * d_max >= w {
        return Err(Error::arg(
            "generate_sample",
            format!("d_max {} too large for width {} (need d_max < W/2)", d_max, w),
        ));
    }
    if h < 8 {
        return Err(Error::arg("generate_sample", format!("height {} too small", h)));
    }
    let mut r = rng::rng_from(rng::derive(seed, rng::Stream::Data, 0));
    let wt = w + d_max; // texture width covering both view samplings

    let bg_hi = (d_max / 8).min(3);
    let bg_d = if bg_hi == 0 { 0 } else { r.gen_range(0..=bg_hi) };
    let mut layers = vec![Layer { shape: None, disparity: bg_d, texture: texture(&mut r, h, wt) }];

    let obj_lo = (d_max / 4).max(bg_hi + 2).max(1);
    let obj_hi = d_max - 1;
    let n_obj = r.gen_range(4..=8usize);
    for _ in 0..n_obj {
        let cx = r.gen_range(0.0..w as f64);
        let cy = r.gen_range(0.0..h as f64);
        let a = r.gen_range(3.0..(w as f64 / 6.0).max(4.0));
        let b = r.gen_range(3.0..(h as f64 / 4.0).max(4.0));
        let disparity = r.gen_range(obj_lo..=obj_hi);
        let shape = if r.gen_bool(0.5) {
            Shape::Rect { cx, cy, a, b }
        } else {
            Shape::Ellipse { cx, cy, a, b }
        };
        layers.push(Layer { shape: Some(shape), disparity, texture: texture(&mut r, h, wt) });
    }
    // painter's order: nearer (larger disparity) layers win overlaps; the
    // background has the smallest disparity bucket, so it sorts first
    layers.sort_by_key(|l| l.disparity);
    let bg_idx = layers.iter().position(|l| l.shape.is_none()).unwrap();

    // topmost layer per pixel, in each view's own frame
    let mut top_left = vec![bg_idx; h * w];
    let mut top_right = vec![bg_idx; h * w];
    for (li, layer) in layers.iter().enumerate() {
        if let Some(shape) = &layer.shape {
            let d = layer.disparity as f64;
            for y in 0..h {
                for x in 0..w {
                    if shape.covers(x as f64, y as f64) {
                        top_left[y * w + x] = li;
                    }
                    // right-frame support: the layer's left-frame sample at x + d
                    if shape.covers(x as f64 + d, y as f64) {
                        top_right[y * w + x] = li;
                    }
                }
            }
        }
    }

    let mut left = vec![0.0f64; 3 * h * w];
    let mut right = vec![0.0f64; 3 * h * w];
    let mut disp = vec![0.0f64; h * w];
    let mut occ = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let li = top_left[y * w + x];
            let d = layers[li].disparity;
            disp[y * w + x] = d as f64;
            for c in 0..3 {
                left[c * h * w + y * w + x] = layers[li].texture[c * h * wt + y * wt + x];
            }
            let ri = top_right[y * w + x];
            let rd = layers[ri].disparity;
            for c in 0..3 {
                right[c * h * w + y * w + x] = layers[ri].texture[c * h * wt + y * wt + (x + rd)];
            }
            occ[y * w + x] = if x >= d && top_right[y * w + (x - d)] == li { 1.0 } else { 0.0 };
        }
    }

    let conv = |v: Vec<f64>, shape: Vec<usize>| -> Tensor<E> {
        Tensor::with_node(shape, v.into_iter().map(|x| lit::<E>(x)).collect(), None)
    };
    Ok(StereoSample {
        left: conv(left, vec![3, h, w]),
        right: conv(right, vec![3, h, w]),
        gt_disparity: conv(disp, vec![h, w]),
        gt_occlusion: conv(occ, vec![h, w]),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reproj_residual(s: &StereoSample<f64>) -> f64 {
        // max |left(x) - right(x - d)| over co-visible pixels, linear interp
        let (h, w) = (s.height(), s.width());
        let mut worst: f64 = 0.0;
        for y in 0..h {
            for x in 0..w {
                if s.gt_occlusion.at2(y, x) != 1.0 {
                    continue;
                }
                let sx = x as f64 - s.gt_disparity.at2(y, x);
                assert!(sx >= 0.0);
                let x0 = sx.floor() as usize;
                let t = sx - x0 as f64;
                for c in 0..3 {
                    let r0 = s.right.at3(c, y, x0);
                    let r1 = s.right.at3(c, y, (x0 + 1).min(w - 1));
                    let rv = r0 * (1.0 - t) + r1 * t;
                    worst = worst.max((s.left.at3(c, y, x) - rv).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_sample::<f64>(7, 32, 64, 16).unwrap();
        let b = generate_sample::<f64>(7, 32, 64, 16).unwrap();
        assert_eq!(a.left.values(), b.left.values());
        assert_eq!(a.right.values(), b.right.values());
        assert_eq!(a.gt_disparity.values(), b.gt_disparity.values());
        assert_eq!(a.gt_occlusion.values(), b.gt_occlusion.values());
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_sample::<f64>(7, 32, 64, 16).unwrap();
        let b = generate_sample::<f64>(8, 32, 64, 16).unwrap();
        assert_ne!(a.left.values(), b.left.values());
    }

    #[test]
    fn covisible_pixels_match_photometrically() {
        for seed in 0..8 {
            let s = generate_sample::<f64>(seed, 32, 64, 16).unwrap();
            assert!(reproj_residual(&s) < 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn disparity_within_range() {
        for seed in 0..8 {
            let s = generate_sample::<f64>(seed, 32, 64, 16).unwrap();
            for &d in s.gt_disparity.values() {
                assert!((0.0..16.0).contains(&d));
            }
        }
    }

    #[test]
    fn occluded_fraction_grows_with_d_max() {
        let mut prev = -1.0f64;
        for &d_max in &[8usize, 16, 24, 32] {
            let mut occluded = 0.0;
            for seed in 0..32u64 {
                let s = generate_sample::<f64>(seed, 64, 128, d_max).unwrap();
                let n = s.gt_occlusion.values().iter().filter(|&&v| v == 0.0).count();
                occluded += n as f64 / (64.0 * 128.0);
            }
            occluded /= 32.0;
            assert!(occluded > prev, "not monotone at d_max={d_max}: {occluded} <= {prev}");
            prev = occluded;
        }
    }

    #[test]
    fn oversized_d_max_rejected() {
        assert!(generate_sample::<f64>(0, 32, 64, 32).is_err());
    }
}
