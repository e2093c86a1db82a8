//! Minimal reverse-mode autodiff over `f64` ndarrays.
//!
//! Graphs are built per forward pass out of `Rc` nodes and torn down when
//! the last handle drops, so they are cheap to create inside data-parallel
//! closures (each batch slot owns its own graph; only parameter storage is
//! shared, behind `Arc`). Backward visits nodes in reverse topological
//! order and accumulates gradients in a fixed structural order, which keeps
//! runs bit-for-bit reproducible.
//!
//! The op set is exactly what the pipeline needs: elementwise arithmetic,
//! a handful of activations, mean/variance reductions, 2-D convolution,
//! max-pooling and separable resampling. Everything is `f64` so gradients
//! can be checked against central finite differences.

mod conv;
mod ops;
mod resize;

pub use conv::{conv2d, maxpool2, Pad};

use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::Arc;

/// Gradients returned per parent; `None` for parents that do not need one.
type BackwardFn = Box<dyn Fn(&ArrayD<f64>, &[bool]) -> Vec<Option<ArrayD<f64>>>>;

pub(crate) struct Node {
    value: Arc<ArrayD<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<ArrayD<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// A value in the computation graph. Cloning is cheap (shared node).
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl Tensor {
    /// A leaf that does not receive gradients.
    pub fn constant(value: ArrayD<f64>) -> Tensor {
        Tensor::leaf(Arc::new(value), false)
    }

    /// A scalar (0-d) constant.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// A leaf backed by shared storage, optionally receiving gradients.
    pub fn leaf(value: Arc<ArrayD<f64>>, requires_grad: bool) -> Tensor {
        Tensor(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub(crate) fn from_op(value: ArrayD<f64>, parents: Vec<Tensor>, backward: BackwardFn) -> Tensor {
        Tensor::from_op_shared(Arc::new(value), parents, backward)
    }

    pub(crate) fn from_op_shared(
        value: Arc<ArrayD<f64>>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Tensor(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward: if requires_grad { Some(backward) } else { None },
        }))
    }

    pub fn value(&self) -> &ArrayD<f64> {
        &self.0.value
    }

    pub fn shared_value(&self) -> Arc<ArrayD<f64>> {
        Arc::clone(&self.0.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Scalar extraction; panics unless the tensor holds exactly one value.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.0.value.len(), 1, "item() on non-scalar tensor");
        *self.0.value.iter().next().expect("empty tensor")
    }

    /// The accumulated gradient, if backward reached this node.
    pub fn grad(&self) -> Option<ArrayD<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn take_grad(&self) -> Option<ArrayD<f64>> {
        self.0.grad.borrow_mut().take()
    }

    /// Detaches the value from the graph (constant copy).
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.shared_value(), false)
    }

    /// Runs reverse-mode accumulation from this tensor, seeding with ones.
    ///
    /// Intended for scalar losses; works for any shape by seeding each
    /// element with 1.
    pub fn backward(&self) {
        if !self.requires_grad() {
            return;
        }
        let order = self.topo_order();
        *self.0.grad.borrow_mut() = Some(ArrayD::ones(IxDyn(self.shape())));
        for node in order.iter().rev() {
            let grad = node.0.grad.borrow().clone();
            let Some(grad) = grad else { continue };
            let Some(backward) = &node.0.backward else { continue };
            let needs: Vec<bool> = node.0.parents.iter().map(|p| p.requires_grad()).collect();
            let parent_grads = backward(&grad, &needs);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, g) in node.0.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                debug_assert_eq!(g.shape(), parent.shape());
                let mut slot = parent.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => *acc += &g,
                    None => *slot = Some(g),
                }
            }
        }
    }

    /// Post-order over the subgraph that requires gradients.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        // Iterative DFS; stack entries are (node, next child to visit).
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(Rc::as_ptr(&self.0) as usize);
        while let Some((node, child)) = stack.pop() {
            if child < node.0.parents.len() {
                let parent = node.0.parents[child].clone();
                stack.push((node, child + 1));
                let key = Rc::as_ptr(&parent.0) as usize;
                if parent.requires_grad() && visited.insert(key) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

/// Views an (H, W, C) tensor value as its dimensions plus a flat slice.
pub(crate) fn as_hwc(value: &ArrayD<f64>) -> (usize, usize, usize, &[f64]) {
    let shape = value.shape();
    assert_eq!(shape.len(), 3, "expected (H, W, C) tensor, got {shape:?}");
    let slice = value.as_slice().expect("tensor values are contiguous");
    (shape[0], shape[1], shape[2], slice)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_accumulates_through_shared_subexpressions() {
        // y = (x + x) * x  =>  dy/dx = 4x
        let x = Tensor::leaf(Arc::new(ArrayD::from_elem(IxDyn(&[2]), 3.0)), true);
        let y = x.add(&x).mul(&x).sum_all();
        y.backward();
        let g = x.grad().unwrap();
        assert_eq!(g[[0]], 12.0);
        assert_eq!(g[[1]], 12.0);
    }

    #[test]
    fn constants_do_not_collect_gradients() {
        let x = Tensor::constant(ArrayD::from_elem(IxDyn(&[2]), 3.0));
        let y = x.mul(&x).sum_all();
        y.backward();
        assert!(x.grad().is_none());
        assert!(!y.requires_grad());
    }
}
