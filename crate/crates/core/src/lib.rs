//! Self-supervised stereo matching on a minimal reverse-mode autodiff engine.
//!
//! The crate is organized in layers:
//!
//! - [`tensor`] / [`tape`] / [`ops`]: dense tensors with reverse-mode
//!   differentiation recorded on a per-step tape, plus a finite-difference
//!   gradient checker ([`gradcheck`]).
//! - [`synth`]: deterministic synthetic stereogram generation, the dual-branch
//!   augmentation pipeline, and PFM/PGM file I/O.
//! - [`model`]: the dual-stream feature extractor (FPN + toy transformer with
//!   multi-layer cross-view attention), cascade cost volumes, and soft-argmax
//!   disparity regression.
//! - [`loss`]: the four self-supervision objectives (photometric, smoothness,
//!   pixel-wise contrastive, disparity difference), the momentum encoder and
//!   memory queue, and the flip-based left-right validity mask.
//! - [`train`]: the dual-branch optimization loop, AdamW, curriculum
//!   scheduling, and binary checkpointing.
//! - [`metrics`]: EPE / Bad-t / D1 evaluation and report generation.

pub mod elem;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use elem::Elem;
pub use error::{Error, Result};
pub use tape::{Gradients, Tape};
pub use tensor::Tensor;
