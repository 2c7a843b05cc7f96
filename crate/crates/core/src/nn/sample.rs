//! Resampling layers: ROIAlign, node-feature pooling and deformable
//! convolution.

use alloc::vec;

use crate::autodiff::{SparseMap, Tape, Var};
use crate::geometry::BBox;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Crops `feature[D, H, W]` to `[D, out, out]` with one bilinear sample at
/// the center of each output cell. The box is clamped to the map and
/// sample points are clamped to the outermost pixel centers.
pub fn roi_align(tape: &mut Tape, feature: Var, bbox: BBox, out: usize) -> Result<Var> {
    let (d, h, w) = match *tape.shape(feature) {
        [d, h, w] => (d, h, w),
        _ => {
            return Err(Error::InvalidShape {
                op: "roi_align",
                shape: tape.shape(feature).to_vec(),
                reason: "feature must be [D, H, W]",
            })
        }
    };
    let b = bbox.clamped(w as f64, h as f64);
    let (bw, bh) = (b.width().max(0.0), b.height().max(0.0));
    let mut map = SparseMap::new();
    for c in 0..d {
        for i in 0..out {
            for j in 0..out {
                let x = b.x1 + (j as f64 + 0.5) * bw / out as f64;
                let y = b.y1 + (i as f64 + 0.5) * bh / out as f64;
                let gx = (x - 0.5).clamp(0.0, (w - 1) as f64);
                let gy = (y - 0.5).clamp(0.0, (h - 1) as f64);
                let taps = crate::autodiff::bilinear_taps(h, w, gy, gx);
                map.push_row(
                    taps.iter()
                        .filter(|(_, wt)| *wt != 0.0)
                        .filter_map(|&(idx, wt)| idx.map(|i| (c * h * w + i, wt))),
                );
            }
        }
    }
    tape.sparse_map(feature, map, &[d, out, out])
}

/// Averages each channel of `patch[D, a, b]` into a length-`D` vector.
pub fn flatten_node_feature(tape: &mut Tape, patch: Var) -> Result<Var> {
    let shape = tape.shape(patch).to_vec();
    let [d, a, b] = shape[..] else {
        return Err(Error::InvalidShape {
            op: "flatten_node_feature",
            shape,
            reason: "patch must be [D, a, b]",
        });
    };
    let n = a * b;
    let flat = tape.reshape(patch, &[d, n])?;
    let avg = tape.constant(Tensor::new(vec![n, 1], vec![1.0 / n as f64; n])?);
    let m = tape.matmul(flat, avg)?;
    tape.reshape(m, &[d])
}

/// 3×3 deformable convolution with full `[C_out, C_in, 3, 3]` weights.
pub fn deformable_conv(tape: &mut Tape, input: Var, weights: Var, offsets: Var) -> Result<Var> {
    tape.deform_conv(input, weights, offsets, false)
}
