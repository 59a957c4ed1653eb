//! Binary checkpointing. Layout:
//!
//! ```text
//! magic "SSMF" | u32 version | u64 step | digest (32 bytes) | payload
//! ```
//!
//! The payload is a sequence of length-prefixed little-endian f32 blocks:
//! model parameters in stable enumeration order, momentum (key encoder)
//! parameters, optimizer first and second moments, optimizer counters, and
//! the memory queue. The digest is SHA-256 over the canonical config text
//! followed by the payload, so both config changes and payload corruption
//! surface as a digest mismatch; short files surface as truncation.

use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::loss::{MemoryQueue, MomentumState};
use crate::model::params::{ParamSet, ParamTensor};
use crate::model::{Model, ModelParams};
use crate::train::adamw::AdamState;
use crate::train::config::TrainConfig;

pub const MAGIC: &[u8; 4] = b"SSMF";
pub const VERSION: u32 = 1;

pub struct Checkpoint<E: Elem> {
    pub step: u64,
    pub params: ModelParams<E>,
    pub momentum: MomentumState<E>,
    pub adam: AdamState<E>,
    pub queue: MemoryQueue<E>,
}

fn put_block<E: Elem>(out: &mut Vec<u8>, data: &[E]) {
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&8u64.to_le_bytes());
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn block_f32(&mut self) -> Result<Vec<f32>> {
        let len = u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize;
        let raw = self.take(len * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn block_u64(&mut self) -> Result<u64> {
        let len = u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize;
        if len != 8 {
            return Err(Error::Truncated);
        }
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn payload_bytes<E: Elem>(cp: &Checkpoint<E>) -> Vec<u8> {
    let mut out = Vec::new();
    for e in cp.params.all_entries() {
        put_block(&mut out, &e.data);
    }
    for e in &cp.momentum.params.entries {
        put_block(&mut out, &e.data);
    }
    for m in &cp.adam.m {
        put_block(&mut out, m);
    }
    for v in &cp.adam.v {
        put_block(&mut out, v);
    }
    put_u64(&mut out, cp.adam.step);
    put_u64(&mut out, cp.adam.skipped_blocks);
    let (qdata, cursor, fill) = cp.queue.raw();
    put_u64(&mut out, cp.queue.capacity() as u64);
    put_u64(&mut out, cp.queue.dim() as u64);
    put_u64(&mut out, cursor as u64);
    put_u64(&mut out, fill as u64);
    put_block(&mut out, qdata);
    out
}

fn digest(config: &TrainConfig, payload: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(config.to_canonical_string().as_bytes());
    h.update(payload);
    h.finalize().into()
}

pub fn save_checkpoint<E: Elem>(path: &Path, cp: &Checkpoint<E>, config: &TrainConfig) -> Result<()> {
    let payload = payload_bytes(cp);
    let d = digest(config, &payload);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut header = Vec::with_capacity(48);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&cp.step.to_le_bytes());
    header.extend_from_slice(&d);
    f.write_all(&header).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&payload).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Load and verify a checkpoint against the experiment config that is
/// supposed to have produced it.
pub fn load_checkpoint<E: Elem>(path: &Path, config: &TrainConfig) -> Result<Checkpoint<E>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 4 {
        return Err(Error::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 4 + 4 + 8 + 32 {
        return Err(Error::Truncated);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let step = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let stored: [u8; 32] = bytes[16..48].try_into().unwrap();
    let payload = &bytes[48..];

    // structural parse first (distinguishes truncation), then the digest
    let model_cfg = config.model_config();
    let (_, mut params) = Model::build::<E>(&model_cfg, config.seed);
    let mut r = Reader { bytes: payload, pos: 0 };
    let mut blocks: Vec<Vec<f32>> = Vec::new();
    let n_params = params.extractor.len() + params.aggregation.len();
    for _ in 0..n_params {
        blocks.push(r.block_f32()?);
    }
    let mut mom_blocks: Vec<Vec<f32>> = Vec::new();
    for _ in 0..params.extractor.len() {
        mom_blocks.push(r.block_f32()?);
    }
    let mut m_blocks: Vec<Vec<f32>> = Vec::new();
    let mut v_blocks: Vec<Vec<f32>> = Vec::new();
    for _ in 0..n_params {
        m_blocks.push(r.block_f32()?);
    }
    for _ in 0..n_params {
        v_blocks.push(r.block_f32()?);
    }
    let adam_step = r.block_u64()?;
    let skipped = r.block_u64()?;
    let qcap = r.block_u64()? as usize;
    let qdim = r.block_u64()? as usize;
    let qcursor = r.block_u64()? as usize;
    let qfill = r.block_u64()? as usize;
    let qdata = r.block_f32()?;
    if !r.done() {
        return Err(Error::Truncated);
    }

    if digest(config, payload) != stored {
        return Err(Error::DigestMismatch);
    }

    // shapes must agree once the digest matches; a mismatch here means the
    // digest collided with a foreign layout, treat as digest failure
    let fill_set = |set: &mut ParamSet<E>, blocks: &[Vec<f32>]| -> Result<()> {
        for (e, b) in set.entries.iter_mut().zip(blocks) {
            if e.data.len() != b.len() {
                return Err(Error::DigestMismatch);
            }
            e.data = b.iter().map(|&v| E::from_f32(v).unwrap()).collect();
        }
        Ok(())
    };
    let ext_len = params.extractor.len();
    fill_set(&mut params.extractor, &blocks[..ext_len])?;
    fill_set(&mut params.aggregation, &blocks[ext_len..])?;

    let mut momentum = MomentumState::init(&params.extractor, config.momentum)?;
    fill_set(&mut momentum.params, &mom_blocks)?;

    let to_e = |b: &Vec<f32>| -> Vec<E> { b.iter().map(|&v| E::from_f32(v).unwrap()).collect() };
    let lens: Vec<usize> = params.all_entries().map(|e: &ParamTensor<E>| e.data.len()).collect();
    let mut adam = AdamState::new(&lens);
    for (dst, src) in adam.m.iter_mut().zip(&m_blocks) {
        if dst.len() != src.len() {
            return Err(Error::DigestMismatch);
        }
        *dst = to_e(src);
    }
    for (dst, src) in adam.v.iter_mut().zip(&v_blocks) {
        if dst.len() != src.len() {
            return Err(Error::DigestMismatch);
        }
        *dst = to_e(src);
    }
    adam.step = adam_step;
    adam.skipped_blocks = skipped;

    let queue = MemoryQueue::restore(qcap, qdim, to_e(&qdata), qcursor, qfill)?;

    Ok(Checkpoint { step, params, momentum, adam, queue })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.height = 16;
        cfg.width = 48;
        cfg.d_max = 16;
        cfg.total_steps = 4;
        cfg.train_samples = 2;
        cfg.holdout_samples = 1;
        cfg
    }

    fn fresh_checkpoint(cfg: &TrainConfig) -> Checkpoint<f32> {
        let (model, params) = Model::build::<f32>(&cfg.model_config(), cfg.seed);
        let momentum = MomentumState::init(&params.extractor, cfg.momentum).unwrap();
        let lens: Vec<usize> = params.all_entries().map(|e| e.data.len()).collect();
        let adam = AdamState::new(&lens);
        let queue = MemoryQueue::new(cfg.contrastive.queue_capacity, model.cfg.out_channels[1]);
        Checkpoint { step: 3, params, momentum, adam, queue }
    }

    #[test]
    fn roundtrip_restores_every_array() {
        let cfg = small_cfg();
        let cp = fresh_checkpoint(&cfg);
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &cp, &cfg).unwrap();
        let back = load_checkpoint::<f32>(&path, &cfg).unwrap();
        assert_eq!(back.step, 3);
        for (a, b) in cp.params.all_entries().zip(back.params.all_entries()) {
            assert_eq!(a.data, b.data, "{}", a.name);
        }
        for (a, b) in cp.momentum.params.entries.iter().zip(&back.momentum.params.entries) {
            assert_eq!(a.data, b.data);
        }
        assert_eq!(back.adam.step, 0);
        assert_eq!(back.queue.fill(), 0);
    }

    #[test]
    fn four_distinct_error_cases() {
        let cfg = small_cfg();
        let cp = fresh_checkpoint(&cfg);
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &cp, &cfg).unwrap();
        let good = std::fs::read(&path).unwrap();

        // bad magic
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path, &cfg), Err(Error::BadMagic)));

        // version mismatch
        let mut bad = good.clone();
        bad[4] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path, &cfg), Err(Error::UnsupportedVersion(99))));

        // truncation
        let bad = good[..good.len() - 5].to_vec();
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path, &cfg), Err(Error::Truncated)));

        // payload corruption -> digest mismatch
        let mut bad = good.clone();
        let idx = 48 + 16; // inside the first parameter block
        bad[idx] ^= 0x40;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path, &cfg), Err(Error::DigestMismatch)));
    }

    #[test]
    fn different_model_config_is_a_digest_mismatch() {
        let cfg = small_cfg();
        let cp = fresh_checkpoint(&cfg);
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &cp, &cfg).unwrap();
        let mut other = cfg.clone();
        other.groups = 4;
        assert!(matches!(load_checkpoint::<f32>(&path, &other), Err(Error::DigestMismatch)));
    }
}
