//! Spatial operations: convolution, sparse resampling and deformable
//! convolution. Feature maps are `[C, H, W]` with no batch axis.

use alloc::vec;
use alloc::vec::Vec;

use super::ops::matmul_raw;
use super::{Op, Tape, Var};
use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// A fixed linear map `out[i] = Σ w · x[j]` given in compressed rows.
///
/// Used for resampling where the sample positions do not depend on
/// learnable values (ROIAlign).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseMap {
    pub(crate) row_start: Vec<usize>,
    pub(crate) entries: Vec<(usize, f64)>,
}

impl SparseMap {
    pub fn new() -> Self {
        Self {
            row_start: vec![0],
            entries: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        self.entries.extend(entries);
        self.row_start.push(self.entries.len());
    }

    pub fn rows(&self) -> usize {
        self.row_start.len() - 1
    }

    pub(crate) fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[self.row_start[i]..self.row_start[i + 1]]
    }
}

/// Bilinear taps around continuous grid position `(y, x)`; taps outside
/// the `h × w` grid are omitted (they read as zero).
pub(crate) fn bilinear_taps(h: usize, w: usize, y: f64, x: f64) -> [(Option<usize>, f64); 4] {
    let y0 = math::floor(y);
    let x0 = math::floor(x);
    let ly = y - y0;
    let lx = x - x0;
    let (y0, x0) = (y0 as i64, x0 as i64);
    let at = |yy: i64, xx: i64| {
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            Some(yy as usize * w + xx as usize)
        } else {
            None
        }
    };
    [
        (at(y0, x0), (1.0 - ly) * (1.0 - lx)),
        (at(y0, x0 + 1), (1.0 - ly) * lx),
        (at(y0 + 1, x0), ly * (1.0 - lx)),
        (at(y0 + 1, x0 + 1), ly * lx),
    ]
}

/// Index bookkeeping shared by the convolution forward and backward.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    /// Source column for output column `ox` and tap `kx`, if inside.
    fn src(&self, o: usize, kk: usize, size: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && i < size as isize).then_some(i as usize)
    }

    /// `[C·k·k, oh·ow]` patch matrix; padding reads zero.
    pub fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let n = self.oh * self.ow;
        let mut cols = vec![0.0; self.c * self.k * self.k * n];
        for c in 0..self.c {
            let src = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &mut cols[((c * self.k + ky) * self.k + kx) * n..][..n];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                row[oy * self.ow + ox] = src[iy * self.w + ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`ConvGeometry::im2col`]: adds patch gradients into `dx`.
    pub fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let n = self.oh * self.ow;
        for c in 0..self.c {
            let dst = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &cols[((c * self.k + ky) * self.k + kx) * n..][..n];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                dst[iy * self.w + ix] += row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

impl Tape {
    /// Cross-correlation of `input[C_in,H,W]` with `kernel[C_out,C_in,k,k]`,
    /// zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        let (ci, h, w) = match *iv.shape() {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    shape: iv.shape().to_vec(),
                    reason: "input must be [C, H, W]",
                })
            }
        };
        let (co, k) = match *kv.shape() {
            [o, c, k1, k2] if c == ci && k1 == k2 && k1 % 2 == 1 => (o, k1),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    left: iv.shape().to_vec(),
                    right: kv.shape().to_vec(),
                })
            }
        };
        if let Some(b) = bias {
            if self.value(b).len() != co {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: kv.shape().to_vec(),
                    right: self.shape(b).to_vec(),
                });
            }
        }
        let (Some(oh), Some(ow)) = (conv_out(h, k, stride, pad), conv_out(w, k, stride, pad)) else {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: iv.shape().to_vec(),
                reason: "non-positive output size",
            });
        };
        let geo = ConvGeometry {
            c: ci,
            h,
            w,
            k,
            stride,
            pad,
            oh,
            ow,
        };
        let cols = geo.im2col(iv.data());
        let mut out = matmul_raw(kv.data(), &cols, co, ci * k * k, oh * ow);
        if let Some(b) = bias {
            let bv = self.data(b);
            for (o, plane) in out.chunks_mut(oh * ow).enumerate() {
                plane.iter_mut().for_each(|v| *v += bv[o]);
            }
        }
        let out = Tensor::new(vec![co, oh, ow], out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            &inputs,
        ))
    }

    /// Applies a fixed sparse linear map to the flattened `x`.
    pub fn sparse_map(&mut self, x: Var, map: SparseMap, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != map.rows() {
            return Err(Error::InvalidShape {
                op: "sparse_map",
                shape: shape.to_vec(),
                reason: "row count does not match output shape",
            });
        }
        if map.entries.iter().any(|&(j, _)| j >= xv.len()) {
            return Err(Error::InvalidShape {
                op: "sparse_map",
                shape: xv.shape().to_vec(),
                reason: "column index out of range",
            });
        }
        let data = (0..map.rows())
            .map(|i| map.row(i).iter().map(|&(j, wt)| wt * xv.data()[j]).sum())
            .collect();
        let out = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(out, Op::Sparse { x, map }, &[x]))
    }

    /// 3×3 deformable convolution, stride 1, output the same size as the
    /// input. `offsets[18,H,W]` holds `(Δx, Δy)` for each of the nine taps
    /// (tap-major, row-major taps). Samples outside the map read zero.
    ///
    /// With `shared == false`, `weight` is `[C_out, C_in, 3, 3]`. With
    /// `shared == true`, `weight` holds a single 3×3 kernel applied to
    /// every channel independently and the output has `C_in` channels.
    pub fn deform_conv(&mut self, input: Var, weight: Var, offsets: Var, shared: bool) -> Result<Var> {
        let (iv, wv, ov) = (self.value(input), self.value(weight), self.value(offsets));
        let (c, h, w) = match *iv.shape() {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(Error::InvalidShape {
                    op: "deform_conv",
                    shape: iv.shape().to_vec(),
                    reason: "input must be [C, H, W]",
                })
            }
        };
        if ov.shape() != [18, h, w] {
            return Err(Error::ShapeMismatch {
                op: "deform_conv offsets",
                left: iv.shape().to_vec(),
                right: ov.shape().to_vec(),
            });
        }
        let co = if shared {
            if wv.len() != 9 {
                return Err(Error::InvalidShape {
                    op: "deform_conv",
                    shape: wv.shape().to_vec(),
                    reason: "shared kernel must hold 9 values",
                });
            }
            c
        } else {
            match *wv.shape() {
                [o, ci, 3, 3] if ci == c => o,
                _ => {
                    return Err(Error::ShapeMismatch {
                        op: "deform_conv weight",
                        left: iv.shape().to_vec(),
                        right: wv.shape().to_vec(),
                    })
                }
            }
        };
        let hw = h * w;
        let x = iv.data();
        let off = ov.data();
        // samples[(ch * 9 + tap) * hw + p]
        let mut samples = vec![0.0; c * 9 * hw];
        for tap in 0..9 {
            let (ky, kx) = ((tap / 3) as f64 - 1.0, (tap % 3) as f64 - 1.0);
            for p in 0..hw {
                let (py, px) = ((p / w) as f64, (p % w) as f64);
                let sx = px + kx + off[(2 * tap) * hw + p];
                let sy = py + ky + off[(2 * tap + 1) * hw + p];
                let taps = bilinear_taps(h, w, sy, sx);
                for ch in 0..c {
                    let plane = &x[ch * hw..(ch + 1) * hw];
                    samples[(ch * 9 + tap) * hw + p] =
                        taps.iter().filter_map(|&(i, wt)| i.map(|i| wt * plane[i])).sum();
                }
            }
        }
        let wd = wv.data();
        let mut out = vec![0.0; co * hw];
        if shared {
            for ch in 0..c {
                for tap in 0..9 {
                    let s = &samples[(ch * 9 + tap) * hw..(ch * 9 + tap + 1) * hw];
                    out[ch * hw..(ch + 1) * hw].iter_mut().zip(s).for_each(|(o, v)| *o += wd[tap] * v);
                }
            }
        } else {
            for o in 0..co {
                for ch in 0..c {
                    for tap in 0..9 {
                        let wt = wd[(o * c + ch) * 9 + tap];
                        let s = &samples[(ch * 9 + tap) * hw..(ch * 9 + tap + 1) * hw];
                        out[o * hw..(o + 1) * hw].iter_mut().zip(s).for_each(|(ov, v)| *ov += wt * v);
                    }
                }
            }
        }
        let out = Tensor::new(vec![co, h, w], out)?;
        Ok(self.push(
            out,
            Op::DeformConv {
                input,
                weight,
                offsets,
                shared,
                samples,
            },
            &[input, weight, offsets],
        ))
    }
}
