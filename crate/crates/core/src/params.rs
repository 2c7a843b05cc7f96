//! Named parameter storage and per-step binding onto a tape.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name: name.to_string(),
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    /// He-uniform initialisation over `fan_in`.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ParamId {
        let bound = crate::math::sqrt(6.0 / fan_in.max(1) as f64);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape/data agree"))
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::Invalid(alloc::format!("missing parameter `{}`", p.name)))?;
            if src.tensor.shape() != p.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameters",
                    left: p.tensor.shape().to_vec(),
                    right: src.tensor.shape().to_vec(),
                });
            }
            p.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.grad = None);
    }
}

/// A tape with every parameter of a store registered as a leaf.
pub struct Ctx {
    pub tape: Tape,
    vars: Vec<Var>,
}

impl Ctx {
    pub fn new(store: &ParamStore) -> Self {
        Self::bind(store, Tape::new())
    }

    /// Binds onto a tape that records no backward information.
    pub fn inference(store: &ParamStore) -> Self {
        Self::bind(store, Tape::inference())
    }

    fn bind(store: &ParamStore, mut tape: Tape) -> Self {
        let vars = store.params.iter().map(|p| tape.leaf(p.tensor.clone())).collect();
        Self { tape, vars }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Runs backward from `loss` and adds each parameter's gradient into
    /// the store. Parameters the loss does not reach receive zeros.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.tape.backward(loss)?;
        for (param, &v) in store.params.iter_mut().zip(&self.vars) {
            match self.tape.grad(v) {
                Some(g) => param.tensor.accumulate_grad(g),
                None => {
                    let zeros = alloc::vec![0.0; param.tensor.len()];
                    param.tensor.accumulate_grad(&zeros);
                }
            }
        }
        Ok(())
    }
}
