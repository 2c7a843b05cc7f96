//! Dynamic-filter instance masks.
//!
//! A controller predicts, at every feature cell, the 169 parameters of a
//! small three-layer 1×1 network. An instance's mask is that network run
//! over the shared 8-channel mask features concatenated with a position
//! map centered on the instance. The warping module transports reference
//! filter maps to the target frame with a deformable convolution whose
//! offsets come from the feature difference of the two frames.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::Var;
use crate::nn::{Conv, ConvHead};
use crate::params::{Ctx, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MASK_CHANNELS: usize = 8;
pub const FILTER_LEN: usize = 169;
pub const DICE_EPS: f64 = 1e-5;

/// `(offset, rows, cols)` of each weight block inside a filter vector;
/// every weight block is followed by its `rows` biases.
const LAYERS: [(usize, usize, usize); 3] = [(0, 8, 10), (88, 8, 8), (160, 1, 8)];

/// The three layers of one instance's mask head.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFilters {
    /// `[out][in]` weights and biases per layer.
    pub weights: [Vec<f64>; 3],
    pub biases: [Vec<f64>; 3],
}

impl MaskFilters {
    pub fn unpack(theta: &[f64]) -> Result<Self> {
        if theta.len() != FILTER_LEN {
            return Err(Error::InvalidShape {
                op: "MaskFilters::unpack",
                shape: vec![theta.len()],
                reason: "filter vector must hold 169 values",
            });
        }
        let part = |i: usize| {
            let (o, r, c) = LAYERS[i];
            (theta[o..o + r * c].to_vec(), theta[o + r * c..o + r * c + r].to_vec())
        };
        let (w0, b0) = part(0);
        let (w1, b1) = part(1);
        let (w2, b2) = part(2);
        Ok(Self {
            weights: [w0, w1, w2],
            biases: [b0, b1, b2],
        })
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(FILTER_LEN);
        for i in 0..3 {
            out.extend_from_slice(&self.weights[i]);
            out.extend_from_slice(&self.biases[i]);
        }
        out
    }
}

/// The 169 filter values stored at cell `(x, y)` of a `[169, H, W]` map.
pub fn filters_at(ctx: &mut Ctx, filter_map: Var, cell: (usize, usize)) -> Result<Var> {
    let (h, w) = match *ctx.tape.shape(filter_map) {
        [FILTER_LEN, h, w] => (h, w),
        _ => {
            return Err(Error::InvalidShape {
                op: "filters_at",
                shape: ctx.tape.shape(filter_map).to_vec(),
                reason: "filter map must be [169, H, W]",
            })
        }
    };
    if cell.0 >= w || cell.1 >= h {
        return Err(Error::Invalid("filter cell outside the map".into()));
    }
    let p = cell.1 * w + cell.0;
    let index: Vec<usize> = (0..FILTER_LEN).map(|c| c * h * w + p).collect();
    ctx.tape.gather(filter_map, &index, &[FILTER_LEN])
}

/// Two-channel relative position map: `(col - x) / S` and `(row - y) / S`
/// with `S = max(H, W)`.
pub fn position_map(center: (usize, usize), height: usize, width: usize) -> Tensor {
    let s = height.max(width) as f64;
    let hw = height * width;
    let mut data = vec![0.0; 2 * hw];
    for row in 0..height {
        for col in 0..width {
            data[row * width + col] = (col as f64 - center.0 as f64) / s;
            data[hw + row * width + col] = (row as f64 - center.1 as f64) / s;
        }
    }
    Tensor::new(vec![2, height, width], data).unwrap()
}

/// Runs one instance's dynamic head on `[8, H, W]` mask features and the
/// instance's position map. Returns `[H, W]` logits.
pub fn mask_forward(ctx: &mut Ctx, mask_features: Var, position: Var, theta: Var) -> Result<Var> {
    let (h, w) = match *ctx.tape.shape(mask_features) {
        [MASK_CHANNELS, h, w] => (h, w),
        _ => {
            return Err(Error::InvalidShape {
                op: "mask_forward",
                shape: ctx.tape.shape(mask_features).to_vec(),
                reason: "mask features must be [8, H, W]",
            })
        }
    };
    if ctx.tape.shape(position) != [2, h, w] {
        return Err(Error::ShapeMismatch {
            op: "mask_forward position",
            left: vec![2, h, w],
            right: ctx.tape.shape(position).to_vec(),
        });
    }
    if ctx.tape.value(theta).len() != FILTER_LEN {
        return Err(Error::InvalidShape {
            op: "mask_forward",
            shape: ctx.tape.shape(theta).to_vec(),
            reason: "filter vector must hold 169 values",
        });
    }
    let f = ctx.tape.reshape(mask_features, &[MASK_CHANNELS, h * w])?;
    let p = ctx.tape.reshape(position, &[2, h * w])?;
    let mut x = ctx.tape.concat(&[f, p], 0)?;
    for (i, &(o, r, c)) in LAYERS.iter().enumerate() {
        let wt = ctx.tape.slice(theta, o, &[r, c])?;
        let b = ctx.tape.slice(theta, o + r * c, &[r])?;
        let y = ctx.tape.matmul(wt, x)?;
        x = ctx.tape.add_col_bias(y, b)?;
        if i < 2 {
            x = ctx.tape.relu(x);
        }
    }
    ctx.tape.reshape(x, &[h, w])
}

/// Dice loss of `sigmoid(logits)` against a binary mask.
pub fn mask_dice(ctx: &mut Ctx, logits: Var, gt: &[f64]) -> Result<Var> {
    let p = ctx.tape.sigmoid(logits);
    ctx.tape.dice_loss(p, gt.to_vec(), DICE_EPS)
}

/// Offset network and shared kernel that warp a reference filter map.
#[derive(Debug, Clone, Copy)]
pub struct FilterWarp {
    pub hidden: Conv,
    pub offsets: Conv,
    /// One 3×3 kernel applied to every filter channel.
    pub kernel: ParamId,
}

impl FilterWarp {
    /// Offsets start at zero and the kernel at the identity tap, so an
    /// untrained warp passes filters through unchanged.
    pub fn new(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> Self {
        let hidden = Conv::new(store, "warp.hidden", dim, dim, 3, 1, rng);
        let offsets = Conv::new(store, "warp.offsets", dim, 18, 3, 1, rng);
        store.get_mut(offsets.weight).data_mut().fill(0.0);
        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        let kernel = store.add("warp.kernel", Tensor::new(vec![3, 3], delta).unwrap());
        Self {
            hidden,
            offsets,
            kernel,
        }
    }

    pub fn offset_field(&self, ctx: &mut Ctx, f_k: Var, f_t: Var) -> Result<Var> {
        let diff = ctx.tape.sub(f_t, f_k)?;
        let h = self.hidden.forward(ctx, diff)?;
        let h = ctx.tape.relu(h);
        self.offsets.forward(ctx, h)
    }

    pub fn forward(&self, ctx: &mut Ctx, f_k: Var, f_t: Var, theta_k: Var) -> Result<Var> {
        if ctx.tape.shape(f_k) != ctx.tape.shape(f_t) {
            return Err(Error::ShapeMismatch {
                op: "warp_filters",
                left: ctx.tape.shape(f_k).to_vec(),
                right: ctx.tape.shape(f_t).to_vec(),
            });
        }
        let offsets = self.offset_field(ctx, f_k, f_t)?;
        let kernel = ctx.p(self.kernel);
        warp_with_offsets(ctx, theta_k, kernel, offsets)
    }
}

/// Depthwise deformable 3×3 convolution of `theta[169, H, W]` by one
/// shared kernel.
pub fn warp_with_offsets(ctx: &mut Ctx, theta: Var, kernel: Var, offsets: Var) -> Result<Var> {
    ctx.tape.deform_conv(theta, kernel, offsets, true)
}

/// Controller, channel reducer and filter warp.
#[derive(Debug, Clone, Copy)]
pub struct SegBranch {
    pub controller: ConvHead,
    pub reduce: Conv,
    pub warp: FilterWarp,
}

impl SegBranch {
    pub fn new(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            controller: ConvHead::new(store, "seg.controller", dim, FILTER_LEN, rng),
            reduce: Conv::new(store, "seg.reduce", dim, MASK_CHANNELS, 1, 1, rng),
            warp: FilterWarp::new(store, dim, rng),
        }
    }

    /// `[169, H, W]` filter map.
    pub fn controller_forward(&self, ctx: &mut Ctx, features: Var) -> Result<Var> {
        self.controller.forward(ctx, features)
    }

    /// `[8, H, W]` mask features.
    pub fn reduce_channels(&self, ctx: &mut Ctx, features: Var) -> Result<Var> {
        self.reduce.forward(ctx, features)
    }

    /// Logits of the instance centered at `cell`, with filters read from
    /// `filter_map` at `filter_cell`.
    pub fn instance_logits(
        &self,
        ctx: &mut Ctx,
        mask_features: Var,
        filter_map: Var,
        filter_cell: (usize, usize),
        cell: (usize, usize),
    ) -> Result<Var> {
        let [_, h, w] = *ctx.tape.shape(mask_features) else {
            unreachable!("mask_forward validates the rank")
        };
        let theta = filters_at(ctx, filter_map, filter_cell)?;
        let pos = ctx.tape.constant(position_map(cell, h, w));
        mask_forward(ctx, mask_features, pos, theta)
    }
}

/// Binarizes `[H, W]` logits at probability 0.5.
pub fn binarize_logits(logits: &[f64]) -> Vec<bool> {
    logits.iter().map(|&v| v > 0.0).collect()
}

/// Nearest-neighbor upsampling of a row-major mask by an integer factor.
pub fn upsample_nearest(mask: &[bool], height: usize, width: usize, factor: usize) -> Vec<bool> {
    let ow = width * factor;
    let mut out = vec![false; height * factor * ow];
    for (i, v) in out.iter_mut().enumerate() {
        let (y, x) = (i / ow, i % ow);
        *v = mask[(y / factor) * width + x / factor];
    }
    out
}

/// Downsamples a row-major mask by `factor × factor` block majority
/// (fraction ≥ 0.5 sets the cell).
pub fn downsample_mask(mask: &[bool], height: usize, width: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (height / factor, width / factor);
    let mut out = vec![0.0; oh * ow];
    let half = (factor * factor) as f64 / 2.0;
    for (i, v) in out.iter_mut().enumerate() {
        let (oy, ox) = (i / ow, i % ow);
        let mut count = 0usize;
        for y in oy * factor..(oy + 1) * factor {
            for x in ox * factor..(ox + 1) * factor {
                count += mask[y * width + x] as usize;
            }
        }
        *v = if count as f64 >= half { 1.0 } else { 0.0 };
    }
    out
}
