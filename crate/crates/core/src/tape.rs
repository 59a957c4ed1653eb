//! Wengert tape for reverse-mode differentiation.
//!
//! Operations record nodes in forward order; [`Tape::backward`] replays them
//! in reverse, accumulating vector-Jacobian products. One tape lives for one
//! training step and is reset afterwards; resetting bumps the epoch and
//! invalidates every outstanding handle of the previous epoch.

use std::cell::RefCell;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle of a recorded node. Tied to the tape epoch it was created in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId {
    pub(crate) epoch: u64,
    pub(crate) index: usize,
}

/// Given the gradient of the node output, produce gradients for each recorded
/// parent, in the parent-list order.
type BackwardFn<E> = Box<dyn Fn(&[E]) -> Vec<Vec<E>>>;

struct Node<E: Elem> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<E>>,
    len: usize,
    is_leaf: bool,
}

struct TapeInner<E: Elem> {
    epoch: u64,
    nodes: Vec<Node<E>>,
}

/// Recording context for one training step. Single-writer: not `Sync`.
pub struct Tape<E: Elem> {
    inner: RefCell<TapeInner<E>>,
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape { inner: RefCell::new(TapeInner { epoch: 0, nodes: Vec::new() }) }
    }

    /// Current epoch counter. Bumped by [`Tape::reset`].
    pub fn epoch(&self) -> u64 {
        self.inner.borrow().epoch
    }

    /// Number of recorded nodes in the current epoch.
    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Drop all nodes and invalidate outstanding handles.
    pub fn reset(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.epoch += 1;
        inner.nodes.clear();
    }

    /// Record `t` as a differentiable leaf. Gradients accumulate on leaves
    /// during [`Tape::backward`].
    pub fn leaf(&self, t: &Tensor<E>) -> Tensor<E> {
        let mut inner = self.inner.borrow_mut();
        let index = inner.nodes.len();
        let epoch = inner.epoch;
        inner.nodes.push(Node { parents: vec![], backward: None, len: t.len(), is_leaf: true });
        Tensor::with_node(t.shape().to_vec(), t.values().to_vec(), Some(NodeId { epoch, index }))
    }

    /// Resolve a tensor's node index in the current epoch.
    ///
    /// `None` for constants; an error for handles from a reset epoch.
    pub(crate) fn slot(&self, t: &Tensor<E>, op: &'static str) -> Result<Option<usize>> {
        match t.node() {
            None => Ok(None),
            Some(id) => {
                if id.epoch != self.inner.borrow().epoch {
                    Err(Error::StaleTape { op })
                } else {
                    Ok(Some(id.index))
                }
            }
        }
    }

    /// Record an interior node. `parents` are indices from [`Tape::slot`].
    pub(crate) fn record(&self, parents: Vec<usize>, len: usize, backward: BackwardFn<E>) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        debug_assert!(parents.iter().all(|&p| p < inner.nodes.len()));
        let index = inner.nodes.len();
        let epoch = inner.epoch;
        inner.nodes.push(Node { parents, backward: Some(backward), len, is_leaf: false });
        NodeId { epoch, index }
    }

    /// Reverse sweep from a scalar loss. Populates gradients for every leaf
    /// reachable from `loss`; unreachable leaves read back as zeros.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<Gradients<E>> {
        if loss.len() != 1 {
            return Err(Error::arg("backward", format!("loss must be scalar, shape {:?}", loss.shape())));
        }
        let start = match self.slot(loss, "backward")? {
            Some(i) => i,
            None => {
                // Constant loss: nothing reachable, all leaf grads are zero.
                let inner = self.inner.borrow();
                return Ok(Gradients::empty(inner.epoch, inner.nodes.len()));
            }
        };
        let inner = self.inner.borrow();
        let mut grads: Vec<Option<Vec<E>>> = (0..inner.nodes.len()).map(|_| None).collect();
        grads[start] = Some(vec![E::one()]);
        for idx in (0..=start).rev() {
            let node = &inner.nodes[idx];
            if node.is_leaf {
                continue; // keep accumulated gradient
            }
            let gout = match grads[idx].take() {
                Some(g) => g,
                None => continue, // not reachable from the loss
            };
            let back = node.backward.as_ref().expect("interior node has backward");
            let parent_grads = back(&gout);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&pidx, pg) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(pg.len(), inner.nodes[pidx].len);
                match &mut grads[pidx] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&pg) {
                            *a = *a + *b;
                        }
                    }
                    None => grads[pidx] = Some(pg),
                }
            }
        }
        let lens: Vec<usize> = inner.nodes.iter().map(|n| n.len).collect();
        Ok(Gradients { epoch: inner.epoch, grads, lens })
    }
}

/// Result of a backward sweep: per-node gradient arrays keyed by handle.
pub struct Gradients<E: Elem> {
    epoch: u64,
    grads: Vec<Option<Vec<E>>>,
    lens: Vec<usize>,
}

impl<E: Elem> Gradients<E> {
    fn empty(epoch: u64, n: usize) -> Self {
        Gradients { epoch, grads: (0..n).map(|_| None).collect(), lens: vec![0; n] }
    }

    /// Gradient with respect to a recorded tensor. Zeros when the tensor was
    /// not reachable from the loss.
    pub fn wrt(&self, t: &Tensor<E>) -> Result<Vec<E>> {
        let id = t.node().ok_or_else(|| Error::arg("gradients", "tensor is not recorded on a tape".to_string()))?;
        if id.epoch != self.epoch {
            return Err(Error::StaleTape { op: "gradients" });
        }
        match self.grads.get(id.index).and_then(|g| g.as_ref()) {
            Some(g) => {
                debug_assert_eq!(g.len(), self.lens[id.index]);
                Ok(g.clone())
            }
            None => Ok(vec![E::zero(); t.len()]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elem::lit;

    fn t64(shape: Vec<usize>, v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(vec![4], vec![1., 2., 3., 4.]));
        let s = tape.sum_all(&x);
        let g = tape.backward(&s).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn grad_of_quadratic_is_two_x() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(vec![3], vec![1., -2., 0.5]));
        let sq = tape.mul(&x, &x).unwrap();
        let s = tape.sum_all(&sq);
        let g = tape.backward(&s).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), vec![2., -4., 1.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(vec![2], vec![1., 2.]));
        assert!(matches!(tape.backward(&x), Err(Error::InvalidArgument { .. })));
    }

    #[test]
    fn unreachable_leaf_reads_zero_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(vec![2], vec![1., 2.]));
        let y = tape.leaf(&t64(vec![2], vec![3., 4.]));
        let s = tape.sum_all(&x);
        let g = tape.backward(&s).unwrap();
        assert_eq!(g.wrt(&y).unwrap(), vec![0.0; 2]);
    }

    #[test]
    fn reset_invalidates_handles() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(vec![2], vec![1., 2.]));
        tape.reset();
        let y = tape.leaf(&t64(vec![2], vec![1., 2.]));
        assert!(matches!(tape.add(&x, &y), Err(Error::StaleTape { .. })));
    }

    #[test]
    fn backward_is_deterministic_bitwise() {
        let run = || -> Vec<f64> {
            let tape = Tape::<f64>::new();
            let x = tape.leaf(&t64(vec![8], (0..8).map(|i| 0.1 * i as f64 + 0.05).collect()));
            let e = tape.exp(&x);
            let m = tape.mul(&e, &x).unwrap();
            let s = tape.mean_all(&m);
            tape.backward(&s).unwrap().wrt(&x).unwrap()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn constant_loss_yields_zero_grads() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(vec![2], vec![1., 2.]));
        let c = Tensor::scalar(lit::<f64>(5.0));
        let g = tape.backward(&c).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), vec![0.0; 2]);
    }
}
