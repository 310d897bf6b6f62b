//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one episode in execution order.
//! [`Tape::backward`] replays the records in decreasing id order and returns
//! the accumulated gradient of every leaf. Besides the generic primitives the
//! tape offers fused kernels for the plastic recurrent update so that a step
//! of an `N`-unit network stores one `N x N` matrix rather than half a dozen.

mod backward;
mod ops;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use backward::Gradients;

static NEXT_TAPE_TOKEN: AtomicU64 = AtomicU64::new(1);

fn fresh_token() -> u64 {
    NEXT_TAPE_TOKEN.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRef {
    id: usize,
    rows: usize,
    cols: usize,
    token: u64,
}

impl NodeRef {
    #[inline]
    pub fn id(&self) -> usize {
        self.id
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Hadamard(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    /// `a * s` with `s` a `1 x 1` node.
    Scale {
        a: usize,
        s: usize,
    },
    MulConst {
        a: usize,
        c: f64,
    },
    AddConst {
        a: usize,
    },
    Tanh(usize),
    Sigmoid(usize),
    Outer(usize, usize),
    Sum(usize),
    SumSqErr {
        pred: usize,
        target: Matrix,
    },
    SoftmaxRow(usize),
    LogProb {
        probs: usize,
        index: usize,
    },
    /// Log-probability of `index` under the softmax of `logits`.
    LogSoftmaxAt {
        logits: usize,
        index: usize,
    },
    Entropy(usize),
    /// Entropy of the softmax of `logits`.
    SoftmaxEntropy(usize),
    Clamp {
        a: usize,
        mask: Vec<bool>,
    },
    SliceCols {
        a: usize,
        start: usize,
    },
    PlasticMatMul {
        y: usize,
        w: usize,
        alpha: usize,
        hebb: usize,
        shared: bool,
    },
    HebbDecay {
        hebb: usize,
        eta: usize,
        pre: usize,
        post: usize,
    },
    HebbOja {
        hebb: usize,
        eta: usize,
        pre: usize,
        post: usize,
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            MatMul(a, b) | Hadamard(a, b) | Add(a, b) | Sub(a, b) | Outer(a, b) => vec![*a, *b],
            Scale { a, s } => vec![*a, *s],
            MulConst { a, .. } | AddConst { a } | Clamp { a, .. } | SliceCols { a, .. } => vec![*a],
            Tanh(a) | Sigmoid(a) | Sum(a) | SoftmaxRow(a) | Entropy(a) | SoftmaxEntropy(a) => {
                vec![*a]
            }
            LogSoftmaxAt { logits, .. } => vec![*logits],
            SumSqErr { pred, .. } => vec![*pred],
            LogProb { probs, .. } => vec![*probs],
            PlasticMatMul { y, w, alpha, hebb, .. } => vec![*y, *w, *alpha, *hebb],
            HebbDecay { hebb, eta, pre, post } | HebbOja { hebb, eta, pre, post } => vec![*hebb, *eta, *pre, *post],
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Matrix,
    pub(crate) requires_grad: bool,
}

/// Append-only record of one forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    token: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            token: fresh_token(),
        }
    }

    /// Drops every record. Handles issued before the reset become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.token = fresh_token();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input (a trainable parameter).
    pub fn leaf(&mut self, value: Matrix) -> NodeRef {
        self.push(Op::Leaf, value, true)
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> NodeRef {
        self.push(Op::Constant, value, false)
    }

    pub fn value(&self, node: NodeRef) -> &Matrix {
        self.check(node).expect("stale or foreign NodeRef");
        &self.nodes[node.id].value
    }

    pub fn is_leaf(&self, node: NodeRef) -> bool {
        matches!(self.nodes[node.id].op, Op::Leaf)
    }

    /// True when every record only references earlier records.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(id, n)| n.op.inputs().iter().all(|&i| i < id))
    }

    pub(crate) fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub(crate) fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> NodeRef {
        let id = self.nodes.len();
        let (rows, cols) = value.shape();
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeRef {
            id,
            rows,
            cols,
            token: self.token,
        }
    }

    pub(crate) fn check(&self, node: NodeRef) -> Result<()> {
        if node.token != self.token || node.id >= self.nodes.len() {
            return Err(Error::contract(
                "tape",
                format!("node {} does not belong to this tape", node.id),
            ));
        }
        Ok(())
    }

    pub(crate) fn requires_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeRef) -> Result<Gradients> {
        self.check(loss)?;
        if loss.shape() != (1, 1) {
            return Err(Error::contract(
                "backward",
                format!("loss must be 1x1, got {:?}", loss.shape()),
            ));
        }
        Ok(backward::run(self, loss.id))
    }
}

#[cfg(test)]
mod tests;
