//! Network building blocks on top of the autodiff tape.

mod backbone;
mod mlp;
mod sample;

pub use backbone::Backbone;
pub use mlp::Mlp;
pub use sample::{deformable_conv, flatten_node_feature, roi_align};

use alloc::format;

use rand::Rng;

use crate::autodiff::Var;
use crate::params::{Ctx, ParamId, ParamStore};
use crate::Result;

/// Square convolution with bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_uniform(&format!("{name}.weight"), &[c_out, c_in, k, k], c_in * k * k, rng);
        let bias = store.add_zeros(&format!("{name}.bias"), &[c_out]);
        Self {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.weight), ctx.p(self.bias));
        ctx.tape.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// `3×3 conv → relu → 1×1 conv`, the shape shared by every dense head.
#[derive(Debug, Clone, Copy)]
pub struct ConvHead {
    pub hidden: Conv,
    pub out: Conv,
}

impl ConvHead {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Conv::new(store, &format!("{name}.0"), c_in, c_in, 3, 1, rng),
            out: Conv::new(store, &format!("{name}.1"), c_in, c_out, 1, 1, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.hidden.forward(ctx, x)?;
        let h = ctx.tape.relu(h);
        self.out.forward(ctx, h)
    }
}
