//! Evaluation metrics (EPE, Bad-t, D1) and report generation over synthetic
//! datasets. Inference runs the standard branch only.

use std::fmt;

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::synth::manifest::DatasetManifest;
use crate::tensor::Tensor;

/// How the absolute and relative thresholds of the D1 outlier rate combine.
/// `And` is the KITTI convention; `Or` follows the looser literal wording
/// sometimes used in print.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum D1Mode {
    And,
    Or,
}

fn masked_pairs<'a, E: Elem>(
    op: &'static str,
    pred: &'a Tensor<E>,
    gt: &'a Tensor<E>,
    mask: Option<&'a Tensor<E>>,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(op, format!("pred {:?} vs gt {:?}", pred.shape(), gt.shape())));
    }
    if let Some(m) = mask {
        if m.shape() != pred.shape() {
            return Err(Error::shape(op, format!("mask {:?} vs pred {:?}", m.shape(), pred.shape())));
        }
    }
    let n = pred.len();
    let selected = match mask {
        Some(m) => m.values().iter().filter(|&&v| v != E::zero()).count(),
        None => n,
    };
    if selected == 0 {
        return Err(Error::EmptyMask { op });
    }
    let pv = pred.values();
    let gv = gt.values();
    let mv = mask.map(|m| m.values());
    Ok((0..n).filter_map(move |i| {
        if let Some(m) = mv {
            if m[i] == E::zero() {
                return None;
            }
        }
        Some((pv[i].to_f64().unwrap(), gv[i].to_f64().unwrap()))
    }))
}

/// Mean absolute disparity error over mask=1 pixels.
pub fn epe<E: Elem>(pred: &Tensor<E>, gt: &Tensor<E>, mask: Option<&Tensor<E>>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in masked_pairs("epe", pred, gt, mask)? {
        sum += (p - g).abs();
        count += 1;
    }
    Ok(sum / count as f64)
}

/// Fraction of mask=1 pixels with error strictly greater than `t`.
pub fn bad_t<E: Elem>(pred: &Tensor<E>, gt: &Tensor<E>, mask: Option<&Tensor<E>>, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::arg("bad_t", format!("threshold {t} must be positive")));
    }
    let mut bad = 0usize;
    let mut count = 0usize;
    for (p, g) in masked_pairs("bad_t", pred, gt, mask)? {
        if (p - g).abs() > t {
            bad += 1;
        }
        count += 1;
    }
    Ok(bad as f64 / count as f64)
}

/// D1 outlier rate: error above 3 px combined with error above 5% of the
/// ground truth, under the chosen combinator.
pub fn d1_rate<E: Elem>(
    pred: &Tensor<E>,
    gt: &Tensor<E>,
    mask: Option<&Tensor<E>>,
    mode: D1Mode,
) -> Result<f64> {
    let mut bad = 0usize;
    let mut count = 0usize;
    for (p, g) in masked_pairs("d1_rate", pred, gt, mask)? {
        let err = (p - g).abs();
        let abs_out = err > 3.0;
        let rel_out = err > 0.05 * g;
        let outlier = match mode {
            D1Mode::And => abs_out && rel_out,
            D1Mode::Or => abs_out || rel_out,
        };
        if outlier {
            bad += 1;
        }
        count += 1;
    }
    Ok(bad as f64 / count as f64)
}

/// Per-sample metric row. Bad-t and D1 are computed over all pixels; EPE is
/// reported over all pixels and over the co-visible (non-occluded) set.
#[derive(Clone, Debug)]
pub struct SampleMetrics {
    pub sample: usize,
    pub epe_all: f64,
    pub epe_noc: f64,
    pub bad1: f64,
    pub bad2: f64,
    pub bad3: f64,
    pub d1: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<SampleMetrics>,
    pub d1_mode: D1Mode,
}

pub const EVAL_CSV_HEADER: &str = "sample,epe_all,epe_noc,bad1,bad2,bad3,d1";

impl EvalReport {
    fn mean(&self, f: impl Fn(&SampleMetrics) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn epe_all(&self) -> f64 {
        self.mean(|r| r.epe_all)
    }

    pub fn epe_noc(&self) -> f64 {
        self.mean(|r| r.epe_noc)
    }

    pub fn bad3(&self) -> f64 {
        self.mean(|r| r.bad3)
    }

    pub fn d1(&self) -> f64 {
        self.mean(|r| r.d1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(EVAL_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.sample, r.epe_all, r.epe_noc, r.bad1, r.bad2, r.bad3, r.d1
            ));
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>7} {:>9} {:>9} {:>7} {:>7} {:>7} {:>7}", "sample", "epe_all", "epe_noc", "bad1", "bad2", "bad3", "d1")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>7} {:>9.4} {:>9.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                r.sample, r.epe_all, r.epe_noc, r.bad1, r.bad2, r.bad3, r.d1
            )?;
        }
        writeln!(
            f,
            "{:>7} {:>9.4} {:>9.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}  (d1 {:?})",
            "mean",
            self.epe_all(),
            self.epe_noc(),
            self.mean(|r| r.bad1),
            self.mean(|r| r.bad2),
            self.bad3(),
            self.d1(),
            self.d1_mode
        )
    }
}

/// Evaluation options. `right_brightness` corrupts the right view at
/// inference time (asymmetric illumination robustness probes).
#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub d1_mode: D1Mode,
    pub right_brightness: f64,
    pub limit: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { d1_mode: D1Mode::And, right_brightness: 1.0, limit: None }
    }
}

/// Inference + metrics over a manifest. Deterministic: no stochastic
/// inference, rows ordered by sample index.
pub fn evaluate<E: Elem>(
    model: &Model,
    params: &ModelParams<E>,
    manifest: &DatasetManifest,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let count = opts.limit.map(|l| l.min(manifest.len())).unwrap_or(manifest.len());
    if count == 0 {
        return Err(Error::EmptyMask { op: "evaluate" });
    }
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let s = manifest.sample::<E>(i)?;
        let right = if opts.right_brightness != 1.0 {
            s.right.map_values(|v| {
                let x = v.to_f64().unwrap() * opts.right_brightness;
                lit::<E>(x.clamp(0.0, 1.0))
            })
        } else {
            s.right.clone()
        };
        let pred = model.infer(params, &s.left, &right)?;
        let noc = &s.gt_occlusion;
        rows.push(SampleMetrics {
            sample: i,
            epe_all: epe(&pred, &s.gt_disparity, None)?,
            epe_noc: epe(&pred, &s.gt_disparity, Some(noc))?,
            bad1: bad_t(&pred, &s.gt_disparity, None, 1.0)?,
            bad2: bad_t(&pred, &s.gt_disparity, None, 2.0)?,
            bad3: bad_t(&pred, &s.gt_disparity, None, 3.0)?,
            d1: d1_rate(&pred, &s.gt_disparity, None, opts.d1_mode)?,
        });
    }
    Ok(EvalReport { rows, d1_mode: opts.d1_mode })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn epe_trivial_cases() {
        let gt = t(vec![2, 2], vec![0.0; 4]);
        let pred = t(vec![2, 2], vec![1.5; 4]);
        assert_eq!(epe(&gt, &gt, None).unwrap(), 0.0);
        assert_eq!(epe(&pred, &gt, None).unwrap(), 1.5);
    }

    #[test]
    fn epe_matches_brute_force() {
        let gt = t(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let pred = t(vec![2, 3], vec![1.5, 1.0, 3.0, 6.0, 4.0, 6.5]);
        let expect = (0.5 + 1.0 + 0.0 + 2.0 + 1.0 + 0.5) / 6.0;
        assert!((epe(&pred, &gt, None).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn bad_t_strict_threshold() {
        let gt = t(vec![1, 2], vec![0.0, 0.0]);
        // error exactly t counts as good
        let pred = t(vec![1, 2], vec![3.0, 3.001]);
        assert_eq!(bad_t(&pred, &gt, None, 3.0).unwrap(), 0.5);
    }

    #[test]
    fn bad_t_half_bad() {
        let gt = t(vec![1, 4], vec![0.0; 4]);
        let pred = t(vec![1, 4], vec![5.0, 5.0, 0.0, 0.0]);
        assert_eq!(bad_t(&pred, &gt, None, 3.0).unwrap(), 0.5);
    }

    #[test]
    fn d1_mode_contrast() {
        // gt=10, pred=13.1: outlier in both modes (3.1 > 3 and 3.1 > 0.5)
        let gt = t(vec![1, 1], vec![10.0]);
        let pred = t(vec![1, 1], vec![13.1]);
        assert_eq!(d1_rate(&pred, &gt, None, D1Mode::And).unwrap(), 1.0);
        assert_eq!(d1_rate(&pred, &gt, None, D1Mode::Or).unwrap(), 1.0);
        // gt=100, pred=104: 4 > 3 but 4 < 5 -> And: good, Or: outlier
        let gt = t(vec![1, 1], vec![100.0]);
        let pred = t(vec![1, 1], vec![104.0]);
        assert_eq!(d1_rate(&pred, &gt, None, D1Mode::And).unwrap(), 0.0);
        assert_eq!(d1_rate(&pred, &gt, None, D1Mode::Or).unwrap(), 1.0);
        // exact prediction: 0 in both modes
        assert_eq!(d1_rate(&gt, &gt, None, D1Mode::And).unwrap(), 0.0);
        assert_eq!(d1_rate(&gt, &gt, None, D1Mode::Or).unwrap(), 0.0);
    }

    #[test]
    fn d1_equals_bad3_on_matching_regimes() {
        // And-mode D1 equals Bad3 where 0.05*gt < 3; Or-mode equals Bad3
        // where 0.05*gt > 3
        let small_gt = t(vec![1, 4], vec![10.0, 20.0, 40.0, 60.0 - 1e-9]);
        let pred = t(vec![1, 4], vec![12.0, 24.0, 44.5, 64.0]);
        let and = d1_rate(&pred, &small_gt, None, D1Mode::And).unwrap();
        let b3 = bad_t(&pred, &small_gt, None, 3.0).unwrap();
        assert_eq!(and, b3);
        let big_gt = t(vec![1, 3], vec![80.0, 100.0, 200.0]);
        let pred2 = t(vec![1, 3], vec![83.5, 104.0, 212.0]);
        let or = d1_rate(&pred2, &big_gt, None, D1Mode::Or).unwrap();
        let b3 = bad_t(&pred2, &big_gt, None, 3.0).unwrap();
        assert_eq!(or, b3);
    }

    #[test]
    fn empty_mask_rejected() {
        let gt = t(vec![1, 2], vec![0.0, 0.0]);
        let mask = t(vec![1, 2], vec![0.0, 0.0]);
        assert!(matches!(epe(&gt, &gt, Some(&mask)), Err(Error::EmptyMask { .. })));
        assert!(matches!(bad_t(&gt, &gt, Some(&mask), 1.0), Err(Error::EmptyMask { .. })));
        assert!(matches!(d1_rate(&gt, &gt, Some(&mask), D1Mode::And), Err(Error::EmptyMask { .. })));
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let gt = t(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let pred = t(vec![1, 4], vec![2.0, 1.0, 5.0, 4.5]);
        let perm_gt = t(vec![1, 4], vec![4.0, 3.0, 2.0, 1.0]);
        let perm_pred = t(vec![1, 4], vec![4.5, 5.0, 1.0, 2.0]);
        assert!((epe(&pred, &gt, None).unwrap() - epe(&perm_pred, &perm_gt, None).unwrap()).abs() < 1e-12);
        assert_eq!(
            bad_t(&pred, &gt, None, 1.0).unwrap(),
            bad_t(&perm_pred, &perm_gt, None, 1.0).unwrap()
        );
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let rows = vec![
            SampleMetrics { sample: 0, epe_all: 1.0, epe_noc: 0.5, bad1: 0.1, bad2: 0.05, bad3: 0.01, d1: 0.02 },
            SampleMetrics { sample: 1, epe_all: 3.0, epe_noc: 2.5, bad1: 0.3, bad2: 0.15, bad3: 0.03, d1: 0.04 },
        ];
        let rep = EvalReport { rows, d1_mode: D1Mode::And };
        assert!((rep.epe_all() - 2.0).abs() < 1e-9);
        assert!((rep.epe_noc() - 1.5).abs() < 1e-9);
        assert!((rep.d1() - 0.03).abs() < 1e-9);
    }
}
