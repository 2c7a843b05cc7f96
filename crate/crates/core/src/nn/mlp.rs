use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::Var;
use crate::params::{Ctx, ParamId, ParamStore};
use crate::{Error, Result};

/// Fully connected layers with relu between them and an affine output.
///
/// Weights are stored `[in, out]` so a row-batch `X[n, in]` maps to
/// `X·W + b`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
    dims: Vec<usize>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let w = store.add_uniform(&format!("{name}.{i}.weight"), &[d[0], d[1]], d[0], rng);
                let b = store.add_zeros(&format!("{name}.{i}.bias"), &[d[1]]);
                (w, b)
            })
            .collect();
        Self {
            layers,
            dims: dims.to_vec(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Applies the MLP to each row of `x[n, in]`, or to a vector `x[in]`
    /// (returning a vector).
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        let (batched, rows) = match shape.as_slice() {
            [n] if *n == self.input_dim() => (false, 1),
            [r, n] if *n == self.input_dim() => (true, *r),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "mlp",
                    left: shape,
                    right: alloc::vec![self.input_dim()],
                })
            }
        };
        let mut h = if batched {
            x
        } else {
            ctx.tape.reshape(x, &[1, self.input_dim()])?
        };
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (ctx.p(w), ctx.p(b));
            h = ctx.tape.matmul(h, wv)?;
            h = ctx.tape.add_row_bias(h, bv)?;
            if i + 1 < self.layers.len() {
                h = ctx.tape.relu(h);
            }
        }
        if batched {
            Ok(h)
        } else {
            debug_assert_eq!(rows, 1);
            ctx.tape.reshape(h, &[self.output_dim()])
        }
    }

    /// Zeroes the final layer so the MLP outputs exactly zero.
    pub fn zero_output(&self, store: &mut ParamStore) {
        let (w, b) = *self.layers.last().unwrap();
        store.get_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}
