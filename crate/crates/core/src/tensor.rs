//! Dense multi-dimensional arrays. A tensor is an immutable value plus an
//! optional handle into the active tape; tensors without a handle are
//! constants and never receive gradient storage.

use std::sync::Arc;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tape::NodeId;

/// Number of elements implied by a shape (product of dimensions; 1 for rank 0).
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Dense tensor with row-major storage.
///
/// Cloning is cheap: values are shared behind an `Arc`. Values are immutable
/// once created; every operation allocates a fresh output.
#[derive(Clone)]
pub struct Tensor<E: Elem> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    node: Option<NodeId>,
}

impl<E: Elem> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, recorded={}, data[..4]={:?})",
            self.shape,
            self.node.is_some(),
            &self.data[..self.data.len().min(4)]
        )
    }
}

impl<E: Elem> Tensor<E> {
    /// Constant tensor from raw values. Not recorded on any tape.
    pub fn from_vec(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} implies {} values, got {}", shape, numel(&shape), data.len()),
            ));
        }
        Ok(Tensor { shape, data: Arc::new(data), node: None })
    }

    /// Constant scalar (rank 0).
    pub fn scalar(v: E) -> Self {
        Tensor { shape: vec![], data: Arc::new(vec![v]), node: None }
    }

    /// Constant tensor filled with `v`.
    pub fn full(shape: Vec<usize>, v: E) -> Self {
        let n = numel(&shape);
        Tensor { shape, data: Arc::new(vec![v; n]), node: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, E::one())
    }

    pub(crate) fn with_node(shape: Vec<usize>, data: Vec<E>, node: Option<NodeId>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data: Arc::new(data), node }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[E] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.data)
    }

    /// Handle into the active tape, when this tensor participates in a
    /// recorded computation.
    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Whether gradients will be accumulated for this tensor on backward.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, detached from the tape (no gradient flows through).
    pub fn detach(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }

    /// Single value of a rank-0 or one-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(Error::shape("item", format!("expected scalar, shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    /// Value at `(c, y, x)` of a `[C, H, W]` tensor. Unchecked layout helper.
    pub fn at3(&self, c: usize, y: usize, x: usize) -> E {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    /// Value at `(y, x)` of a `[H, W]` tensor.
    pub fn at2(&self, y: usize, x: usize) -> E {
        self.data[y * self.shape[1] + x]
    }

    /// Copy of the values as `f64`, for metrics and oracles.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap()).collect()
    }

    /// Constant tensor from `f64` values.
    pub fn from_f64_slice(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| crate::elem::lit(v)).collect())
    }

    /// Elementwise map into a new constant tensor (value path, not recorded).
    pub fn map_values(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
            node: None,
        }
    }

    /// Horizontal flip of the last (width) axis. Value path, not recorded.
    /// Works for `[H, W]` and `[C, H, W]` tensors.
    pub fn hflip(&self) -> Result<Self> {
        let rank = self.shape.len();
        if rank != 2 && rank != 3 {
            return Err(Error::shape("hflip", format!("expected rank 2 or 3, got {:?}", self.shape)));
        }
        let w = self.shape[rank - 1];
        let rows = self.data.len() / w;
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..rows {
            let row = &self.data[r * w..(r + 1) * w];
            out.extend(row.iter().rev().copied());
        }
        Ok(Tensor { shape: self.shape.clone(), data: Arc::new(out), node: None })
    }

    /// True when every stored value is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
