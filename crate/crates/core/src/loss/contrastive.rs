//! Pixel-wise contrastive machinery: anchor/positive/negative sampling
//! between the standard and augmented branches, the ring-buffer memory queue
//! of past key vectors, and the InfoNCE objective.

use rand::Rng;

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ContrastiveConfig {
    /// in-image negatives per anchor (N)
    pub negatives: usize,
    /// queue negatives drawn per step (K)
    pub queue_draw: usize,
    pub temperature: f64,
    /// anchors sampled per image
    pub anchors: usize,
    /// positive jitter bound in pixels (components uniform in [-j, j])
    pub jitter: usize,
    /// side length of the negative sampling window
    pub window: usize,
    pub queue_capacity: usize,
    /// key vectors enqueued per image per step
    pub enqueue_per_image: usize,
}

impl Default for ContrastiveConfig {
    /// Desk-scale defaults; the queue draw of the paper's setting is 6000,
    /// available via [`ContrastiveConfig::paper`] or the config file.
    fn default() -> Self {
        ContrastiveConfig {
            negatives: 60,
            queue_draw: 512,
            temperature: 0.07,
            anchors: 256,
            jitter: 1,
            window: 50,
            queue_capacity: 8192,
            enqueue_per_image: 128,
        }
    }
}

impl ContrastiveConfig {
    /// Full-scale reference values: N = 60, K = 6000, tau = 0.07.
    pub fn paper() -> Self {
        ContrastiveConfig { queue_draw: 6000, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::arg("contrastive", format!("temperature {} must be positive", self.temperature)));
        }
        if self.anchors == 0 || self.negatives == 0 {
            return Err(Error::arg("contrastive", "anchors and negatives must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Index sets produced by [`sample_pairs`]; positions are `(y, x)` on the
/// feature grid.
#[derive(Clone, Debug)]
pub struct SamplePlan {
    pub anchors: Vec<(usize, usize)>,
    pub positives: Vec<(usize, usize)>,
    /// `negatives[i]` holds the in-image negatives of anchor `i`
    pub negatives: Vec<Vec<(usize, usize)>>,
}

/// Draw anchors on the standard-branch grid, positives at jittered positions
/// on the augmented branch, and per-anchor negatives from a window around
/// the anchor, excluding a guard zone around the positive. Deterministic in
/// `rng_seed`.
pub fn sample_pairs(
    grid: (usize, usize),
    rng_seed: u64,
    cfg: &ContrastiveConfig,
) -> Result<SamplePlan> {
    cfg.validate()?;
    let (h, w) = grid;
    if h == 0 || w == 0 {
        return Err(Error::arg("sample_pairs", "empty feature grid".to_string()));
    }
    let mut r = rng::rng_from(rng::derive(rng_seed, rng::Stream::Contrastive, 0));
    let mut anchors = Vec::with_capacity(cfg.anchors);
    let mut positives = Vec::with_capacity(cfg.anchors);
    let mut negatives = Vec::with_capacity(cfg.anchors);
    let j = cfg.jitter as i64;
    for _ in 0..cfg.anchors {
        let ay = r.gen_range(0..h);
        let ax = r.gen_range(0..w);
        anchors.push((ay, ax));
        let py = (ay as i64 + r.gen_range(-j..=j)).clamp(0, h as i64 - 1) as usize;
        let px = (ax as i64 + r.gen_range(-j..=j)).clamp(0, w as i64 - 1) as usize;
        positives.push((py, px));

        // window of side `window` centered at the anchor, clipped in-bounds
        let half = (cfg.window / 2) as i64;
        let y_lo = (ay as i64 - half).max(0) as usize;
        let y_hi = (ay as i64 + half).min(h as i64 - 1) as usize;
        let x_lo = (ax as i64 - half).max(0) as usize;
        let x_hi = (ax as i64 + half).min(w as i64 - 1) as usize;
        let mut negs = Vec::with_capacity(cfg.negatives);
        let mut attempts = 0usize;
        while negs.len() < cfg.negatives {
            attempts += 1;
            if attempts > 1000 * cfg.negatives {
                return Err(Error::arg(
                    "sample_pairs",
                    format!("window {}x{} too small for the exclusion zone", y_hi - y_lo + 1, x_hi - x_lo + 1),
                ));
            }
            let ny = r.gen_range(y_lo..=y_hi);
            let nx = r.gen_range(x_lo..=x_hi);
            // exclusion: Chebyshev distance <= 2 of the positive
            let dy = (ny as i64 - py as i64).abs();
            let dx = (nx as i64 - px as i64).abs();
            if dy.max(dx) <= 2 {
                continue;
            }
            negs.push((ny, nx));
        }
        negatives.push(negs);
    }
    Ok(SamplePlan { anchors, positives, negatives })
}

/// Ring buffer of L2-normalized key vectors.
#[derive(Clone)]
pub struct MemoryQueue<E: Elem> {
    capacity: usize,
    dim: usize,
    data: Vec<E>,
    cursor: usize,
    fill: usize,
}

impl<E: Elem> MemoryQueue<E> {
    pub fn new(capacity: usize, dim: usize) -> Self {
        MemoryQueue { capacity, dim, data: vec![E::zero(); capacity * dim], cursor: 0, fill: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn vector(&self, i: usize) -> &[E] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Enqueue one unit-norm vector, overwriting the oldest when full.
    pub fn push(&mut self, v: &[E]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::shape("queue_push", format!("vector dim {} vs {}", v.len(), self.dim)));
        }
        let norm: f64 = v.iter().map(|x| x.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(Error::arg("queue_push", format!("vector norm {norm} not unit")));
        }
        self.data[self.cursor * self.dim..(self.cursor + 1) * self.dim].copy_from_slice(v);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.fill = (self.fill + 1).min(self.capacity);
        Ok(())
    }

    /// Uniform draw of `min(k, fill)` stored vectors without replacement,
    /// deterministic in `seed`. Returned as a `[n, dim]` tensor.
    pub fn draw(&self, k: usize, seed: u64) -> Tensor<E> {
        let n = k.min(self.fill);
        let mut idx: Vec<usize> = (0..self.fill).collect();
        let mut r = rng::rng_from(rng::derive(seed, rng::Stream::Queue, 1));
        for i in 0..n {
            let j = r.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        let mut out = Vec::with_capacity(n * self.dim);
        for &i in idx.iter().take(n) {
            out.extend_from_slice(self.vector(i));
        }
        Tensor::with_node(vec![n, self.dim], out, None)
    }

    /// Raw state accessors for checkpointing.
    pub fn raw(&self) -> (&[E], usize, usize) {
        (&self.data, self.cursor, self.fill)
    }

    pub fn restore(capacity: usize, dim: usize, data: Vec<E>, cursor: usize, fill: usize) -> Result<Self> {
        if data.len() != capacity * dim || cursor >= capacity.max(1) || fill > capacity {
            return Err(Error::arg("queue_restore", "inconsistent queue state".to_string()));
        }
        Ok(MemoryQueue { capacity, dim, data, cursor, fill })
    }
}

/// Enqueue a uniform subsample of key feature vectors from one image's
/// feature map `[C,H,W]` (L2-normalized per pixel before storage).
pub fn queue_update<E: Elem>(
    queue: &mut MemoryQueue<E>,
    key_features: &Tensor<E>,
    per_image: usize,
    seed: u64,
) -> Result<()> {
    let (c, h, w) = (key_features.shape()[0], key_features.shape()[1], key_features.shape()[2]);
    if c != queue.dim() {
        return Err(Error::shape("queue_update", format!("feature dim {} vs queue {}", c, queue.dim())));
    }
    let n = (h * w).min(per_image);
    let mut idx: Vec<usize> = (0..h * w).collect();
    let mut r = rng::rng_from(rng::derive(seed, rng::Stream::Queue, 0));
    for i in 0..n {
        let j = r.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let fv = key_features.values();
    let mut v = vec![E::zero(); c];
    for &pix in idx.iter().take(n) {
        let mut norm = E::zero();
        for ci in 0..c {
            let x = fv[ci * h * w + pix];
            norm = norm + x * x;
        }
        let inv = E::one() / (norm + lit::<E>(1e-12)).sqrt();
        for ci in 0..c {
            v[ci] = fv[ci * h * w + pix] * inv;
        }
        queue.push(&v)?;
    }
    Ok(())
}

/// Pixel-wise InfoNCE. `query` is the recorded `[P,C]` anchor matrix;
/// `positive` `[P,C]` and `negatives` `[P,N,C]` come from the key branch and
/// are detached inside (gradients flow to the query only); `queue_vectors`
/// `[K,C]` are shared negatives for every anchor. All vectors must be
/// L2-normalized.
pub fn infonce_loss<E: Elem>(
    tape: &Tape<E>,
    query: &Tensor<E>,
    positive: &Tensor<E>,
    negatives: &Tensor<E>,
    queue_vectors: &Tensor<E>,
    temperature: f64,
) -> Result<Tensor<E>> {
    if query.shape().len() != 2 || positive.shape() != query.shape() {
        return Err(Error::shape(
            "infonce_loss",
            format!("query {:?} vs positive {:?}", query.shape(), positive.shape()),
        ));
    }
    let (p, c) = (query.shape()[0], query.shape()[1]);
    if negatives.shape().len() != 3 || negatives.shape()[0] != p || negatives.shape()[2] != c {
        return Err(Error::shape(
            "infonce_loss",
            format!("negatives {:?} vs [P={p}, N, C={c}]", negatives.shape()),
        ));
    }
    if queue_vectors.shape().len() != 2 || (queue_vectors.shape()[0] > 0 && queue_vectors.shape()[1] != c) {
        return Err(Error::shape("infonce_loss", format!("queue {:?} vs C={c}", queue_vectors.shape())));
    }
    if temperature <= 0.0 {
        return Err(Error::arg("infonce_loss", format!("temperature {temperature}")));
    }
    let check_unit = |t: &Tensor<E>, rows: usize, what: &str| -> Result<()> {
        let v = t.values();
        for i in 0..rows {
            let norm: f64 = v[i * c..(i + 1) * c].iter().map(|x| x.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-3 {
                return Err(Error::arg("infonce_loss", format!("{what} row {i} has norm {norm}")));
            }
        }
        Ok(())
    };
    check_unit(query, p, "query")?;
    check_unit(positive, p, "positive")?;
    let n = negatives.shape()[1];
    check_unit(&Tensor::with_node(vec![p * n, c], negatives.values().to_vec(), None), p * n, "negative")?;
    check_unit(queue_vectors, queue_vectors.shape()[0], "queue")?;

    // keys carry no gradient
    let k_pos = positive.detach();
    let k_neg = negatives.detach();
    let k_queue = queue_vectors.detach();

    // positive similarity: rowwise dot -> [P,1]
    let pos_sim = tape.sum_axis(&tape.mul(query, &k_pos)?, 1, true)?;
    // in-image negatives: one rowwise dot per negative slot
    let mut sim_cols: Vec<Tensor<E>> = vec![pos_sim];
    for jn in 0..n {
        let slab = tape.reshape(&tape.narrow(&k_neg, 1, jn, 1)?, vec![p, c])?;
        sim_cols.push(tape.sum_axis(&tape.mul(query, &slab)?, 1, true)?);
    }
    // queue negatives: [P,C] x [C,K]
    let kq = queue_vectors.shape()[0];
    let refs: Vec<&Tensor<E>> = sim_cols.iter().collect();
    let mut logits = tape.concat(&refs, 1)?;
    if kq > 0 {
        let qt = tape.transpose2(&k_queue)?;
        let queue_sim = tape.matmul(query, &qt)?;
        logits = tape.concat(&[&logits, &queue_sim], 1)?;
    }
    let logits = tape.mul_scalar(&logits, lit::<E>(1.0 / temperature));

    // mean over anchors of logsumexp(row) - row[0]
    let row_max = tape.row_max(&logits)?;
    let shifted = tape.sub_colvec(&logits, &row_max)?;
    let lse = tape.add(&tape.ln(&tape.sum_axis(&tape.exp(&shifted), 1, true)?), &row_max)?;
    let pos_col = tape.narrow(&logits, 1, 0, 1)?;
    let per_anchor = tape.sub(&lse, &pos_col)?;
    Ok(tape.mean_all(&per_anchor))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(p: usize, c: usize, seed: u64) -> Tensor<f64> {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut data = vec![0.0; p * c];
        for i in 0..p {
            let row: Vec<f64> = (0..c).map(|_| next()).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            for (j, v) in row.iter().enumerate() {
                data[i * c + j] = v / norm;
            }
        }
        Tensor::from_vec(vec![p, c], data).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_m_plus_one() {
        // all similarities equal: loss = ln(M+1) with M total negatives
        let tape = Tape::<f64>::new();
        let c = 4;
        let q = Tensor::from_vec(vec![1, c], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let pos = q.clone();
        let n = 7;
        let negs = Tensor::from_vec(vec![1, n, c], [1.0, 0.0, 0.0, 0.0].repeat(n)).unwrap();
        let kq = 5;
        let queue = Tensor::from_vec(vec![kq, c], [1.0, 0.0, 0.0, 0.0].repeat(kq)).unwrap();
        let l = infonce_loss(&tape, &q, &pos, &negs, &queue, 0.07).unwrap().item().unwrap();
        let m = (n + kq) as f64;
        assert!((l - (m + 1.0).ln()).abs() < 1e-9);
    }

    #[test]
    fn hand_value_one_pos_one_neg() {
        // positive similarity 1, negative 0, tau = 1: -log(e/(e+1))
        let tape = Tape::<f64>::new();
        let q = Tensor::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let pos = q.clone();
        let negs = Tensor::from_vec(vec![1, 1, 2], vec![0.0, 1.0]).unwrap();
        let queue = Tensor::<f64>::zeros(vec![0, 2]);
        let l = infonce_loss(&tape, &q, &pos, &negs, &queue, 1.0).unwrap().item().unwrap();
        let expect = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((l - expect).abs() < 1e-12, "{l} vs {expect}");
        assert!((expect - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn unnormalized_inputs_rejected() {
        let tape = Tape::<f64>::new();
        let q = Tensor::from_vec(vec![1, 2], vec![2.0, 0.0]).unwrap();
        let negs = Tensor::from_vec(vec![1, 1, 2], vec![0.0, 1.0]).unwrap();
        let queue = Tensor::<f64>::zeros(vec![0, 2]);
        assert!(infonce_loss(&tape, &q, &q, &negs, &queue, 1.0).is_err());
    }

    #[test]
    fn gradients_reach_the_query_only() {
        let tape = Tape::<f64>::new();
        let q = tape.leaf(&unit_rows(3, 4, 7));
        let pos = tape.leaf(&unit_rows(3, 4, 8));
        let negs_flat = unit_rows(6, 4, 9);
        let negs = tape.leaf(&Tensor::from_vec(vec![3, 2, 4], negs_flat.values().to_vec()).unwrap());
        let queue = Tensor::<f64>::zeros(vec![0, 4]);
        let l = infonce_loss(&tape, &q, &pos, &negs, &queue, 0.5).unwrap();
        let g = tape.backward(&l).unwrap();
        assert!(g.wrt(&q).unwrap().iter().any(|&v| v != 0.0));
        assert!(g.wrt(&pos).unwrap().iter().all(|&v| v == 0.0));
        assert!(g.wrt(&negs).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn monotone_in_similarities() {
        // more aligned positive lowers the loss; more aligned negative raises it
        let tape = Tape::<f64>::new();
        let c = 3;
        let q = Tensor::from_vec(vec![1, c], vec![1.0, 0.0, 0.0]).unwrap();
        let mk = |sim: f64| {
            let other = (1.0 - sim * sim).max(0.0).sqrt();
            Tensor::from_vec(vec![1, c], vec![sim, other, 0.0]).unwrap()
        };
        let queue = Tensor::<f64>::zeros(vec![0, c]);
        let neg = Tensor::from_vec(vec![1, 1, c], vec![0.0, 0.0, 1.0]).unwrap();
        let l_low = infonce_loss(&tape, &q, &mk(0.2), &neg, &queue, 0.2).unwrap().item().unwrap();
        let l_high = infonce_loss(&tape, &q, &mk(0.8), &neg, &queue, 0.2).unwrap().item().unwrap();
        assert!(l_high < l_low);
        let negify = |sim: f64| {
            let other = (1.0 - sim * sim).max(0.0).sqrt();
            Tensor::from_vec(vec![1, 1, c], vec![sim, 0.0, other]).unwrap()
        };
        let pos = mk(0.5);
        let l_soft = infonce_loss(&tape, &q, &pos, &negify(0.1), &queue, 0.2).unwrap().item().unwrap();
        let l_hard = infonce_loss(&tape, &q, &pos, &negify(0.9), &queue, 0.2).unwrap().item().unwrap();
        assert!(l_hard > l_soft);
    }

    #[test]
    fn queue_ring_semantics() {
        let mut q = MemoryQueue::<f64>::new(3, 2);
        let unit = [1.0, 0.0];
        for _ in 0..5 {
            q.push(&unit).unwrap();
        }
        assert_eq!(q.fill(), 3);
        assert_eq!(q.capacity(), 3);
        // draw with fill < k returns exactly fill vectors
        let d = q.draw(10, 0);
        assert_eq!(d.shape(), &[3, 2]);
        // non-unit vector rejected
        assert!(q.push(&[2.0, 0.0]).is_err());
    }

    #[test]
    fn sample_plan_respects_contracts() {
        let cfg = ContrastiveConfig { anchors: 64, ..Default::default() };
        let plan = sample_pairs((16, 32), 42, &cfg).unwrap();
        assert_eq!(plan.anchors.len(), 64);
        for i in 0..plan.anchors.len() {
            let (ay, ax) = plan.anchors[i];
            let (py, px) = plan.positives[i];
            assert!((ay as i64 - py as i64).abs() <= 1 && (ax as i64 - px as i64).abs() <= 1);
            assert_eq!(plan.negatives[i].len(), cfg.negatives);
            for &(ny, nx) in &plan.negatives[i] {
                let dy = (ny as i64 - py as i64).abs();
                let dx = (nx as i64 - px as i64).abs();
                assert!(dy.max(dx) > 2, "negative inside the exclusion zone");
                assert!(ny < 16 && nx < 32);
            }
        }
        // deterministic
        let plan2 = sample_pairs((16, 32), 42, &cfg).unwrap();
        assert_eq!(plan.anchors, plan2.anchors);
        assert_eq!(plan.positives, plan2.positives);
    }
}
