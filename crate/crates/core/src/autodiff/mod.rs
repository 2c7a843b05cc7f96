//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during a forward pass. Each value
//! is addressed by a [`Var`]; operations append a node recording their
//! inputs so that [`Tape::backward`] can replay them in reverse. A fresh
//! tape is built for every training step.

mod backward;
mod conv;
mod loss;
mod ops;

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

pub use conv::SparseMap;
pub(crate) use conv::bilinear_taps;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Abs,
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Unary(UnaryKind, Var),
    Binary(BinaryKind, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Slice {
        x: Var,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        outer: usize,
        inner: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    ScatterAddRows {
        x: Var,
        rows: Vec<usize>,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    AddRowBias(Var, Var),
    AddColBias(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Sparse {
        x: Var,
        map: SparseMap,
    },
    DeformConv {
        input: Var,
        weight: Var,
        offsets: Var,
        shared: bool,
        samples: Vec<f64>,
    },
    Focal {
        pred: Var,
        target: Vec<f64>,
        alpha: f64,
        beta: f64,
        norm: f64,
    },
    Dice {
        pred: Var,
        target: Vec<f64>,
        eps: f64,
    },
    Bce {
        pred: Var,
        labels: Vec<f64>,
        eps: f64,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) tracked: bool,
}

/// Recorded computation graph plus the gradients accumulated by
/// [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    no_grad: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that stores values but records no backward information.
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn is_recording(&self) -> bool {
        !self.no_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input (a parameter or a value under test).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let tracked = !self.no_grad;
        self.push_node(value, Op::Leaf, tracked)
    }

    /// Registers a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = !self.no_grad && inputs.iter().any(|v| self.nodes[v.0].tracked);
        if tracked {
            self.push_node(value, op, true)
        } else {
            self.push_node(value, Op::Leaf, false)
        }
    }

    fn push_node(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a one-element `loss`. Gradients add into the
    /// tape's buffers, so repeated calls accumulate until
    /// [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            self.propagate(i, &g, &mut local);
            local[i] = Some(g);
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        for (i, g) in local.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            match self.grads[i].as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => self.grads[i] = Some(g),
            }
        }
        Ok(())
    }
}

pub(crate) fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}
