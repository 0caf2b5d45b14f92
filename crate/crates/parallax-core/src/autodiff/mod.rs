//! A small reverse-mode autodiff tape over `ndarray` in `f32`.
//!
//! Forward calls build a Wengert list; [`Tape::backward`] walks it in reverse,
//! invoking each edge's pullback. Values are reference-counted so pullback
//! closures can capture what they need cheaply. Nodes without
//! `requires_grad` inputs carry no edges, so constant subgraphs (input clips,
//! shifted-copy stacks, masks) cost nothing at backward time.
//!
//! Determinism: every op reduces in a fixed order, and frame-parallel kernels
//! fold their partial results in frame order, so results are bit-identical
//! across thread counts and reruns.

mod conv;
mod ops;
mod warp_ops;

pub use conv::{Conv2dSpec, ConvT2dSpec};
pub use ops::{coverage_counts, unfold_out_dims};

use ndarray::ArrayD;
use std::cell::RefCell;
use std::sync::Arc;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
}

pub(crate) struct Edge {
    pub parent: usize,
    pub pullback: Box<dyn Fn(&ArrayD<f32>) -> ArrayD<f32>>,
}

pub(crate) struct Node {
    pub value: Arc<ArrayD<f32>>,
    pub requires_grad: bool,
    pub edges: Vec<Edge>,
}

/// Reverse-mode tape. One forward pass per tape; create a fresh tape per
/// training step.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub(crate) fn push(&self, value: ArrayD<f32>, requires_grad: bool, edges: Vec<Edge>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            requires_grad,
            edges,
        });
        Var {
            id: nodes.len() - 1,
        }
    }

    /// A leaf that does not require gradients.
    pub fn constant(&self, value: ArrayD<f32>) -> Var {
        self.push(value, false, Vec::new())
    }

    /// A leaf that accumulates gradients (a parameter).
    pub fn param(&self, value: ArrayD<f32>) -> Var {
        self.push(value, true, Vec::new())
    }

    /// The node's value.
    pub fn value(&self, v: Var) -> Arc<ArrayD<f32>> {
        Arc::clone(&self.nodes.borrow()[v.id].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    pub(crate) fn any_requires_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.id].requires_grad)
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.id].value.len(),
            1,
            "backward starts from a scalar loss"
        );
        let mut grads: Vec<Option<ArrayD<f32>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(ArrayD::ones(nodes[loss.id].value.shape().to_vec()));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            for edge in &node.edges {
                let contrib = (edge.pullback)(&g);
                match &mut grads[edge.parent] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            }
            if node.requires_grad && node.edges.is_empty() {
                // leaf parameter: keep its gradient
                grads[id] = Some(g);
            }
        }
        Gradients { grads }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f32>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<f32>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests;
