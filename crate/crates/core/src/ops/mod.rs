//! Differentiable operations, implemented as methods on [`crate::Tape`].
//!
//! Every operation computes its value eagerly and, when any input is
//! recorded, pushes one node whose backward closure maps the output gradient
//! to input gradients. Operations that parallelize internally assign each
//! output (or input-gradient) element to exactly one task, so results are
//! bitwise deterministic for a fixed reduction order.

mod attention;
mod conv;
mod kern;
mod elementwise;
mod matmul;
mod norm;
mod reduce;
mod sample;
mod shape;
mod ssim;
mod volume;

pub use sample::WarpOutput;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Collects the recorded parents of an operation and remembers which input
/// landed in which output-gradient slot.
pub(crate) struct Rec {
    parents: Vec<usize>,
}

impl Rec {
    pub(crate) fn new() -> Self {
        Rec { parents: Vec::new() }
    }

    /// Register `t` as an input. Returns the gradient slot for recorded
    /// tensors, `None` for constants.
    pub(crate) fn input<E: Elem>(
        &mut self,
        tape: &Tape<E>,
        t: &Tensor<E>,
        op: &'static str,
    ) -> Result<Option<usize>> {
        match tape.slot(t, op)? {
            Some(idx) => {
                self.parents.push(idx);
                Ok(Some(self.parents.len() - 1))
            }
            None => Ok(None),
        }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub(crate) fn len(&self) -> usize {
        self.parents.len()
    }

    /// Finish the op: record a node when any input was recorded.
    pub(crate) fn finish<E: Elem>(
        self,
        tape: &Tape<E>,
        out_len: usize,
        backward: impl Fn(&[E]) -> Vec<Vec<E>> + 'static,
    ) -> Option<crate::tape::NodeId> {
        if self.parents.is_empty() {
            None
        } else {
            Some(tape.record(self.parents, out_len, Box::new(backward)))
        }
    }
}

pub(crate) fn same_shape<E: Elem>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Split a shape at `axis` into (outer, axis length, inner) strides.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

pub(crate) fn check_axis<E: Elem>(op: &'static str, t: &Tensor<E>, axis: usize) -> Result<()> {
    if axis >= t.shape().len() {
        return Err(Error::arg(op, format!("axis {} out of range for shape {:?}", axis, t.shape())));
    }
    Ok(())
}
