//! Backward rules, one per recorded [`Op`].

use alloc::vec;

use super::conv::{bilinear_taps, ConvGeometry};
use super::loss::{dice_parts, focal_term};
use super::ops::{matmul_raw, transpose_raw};
use super::{accumulate, BinaryKind, Op, Tape, UnaryKind, Var};

type Grads = [Option<alloc::vec::Vec<f64>>];

impl Tape {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub(super) fn propagate(&self, i: usize, g: &[f64], grads: &mut Grads) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Unary(kind, x) => {
                if !self.wants(*x) {
                    return;
                }
                let xd = self.data(*x);
                let out = node.value.data();
                accumulate(grads, *x, xd.len(), |acc| {
                    for j in 0..acc.len() {
                        acc[j] += g[j]
                            * match kind {
                                UnaryKind::Abs => {
                                    if xd[j] > 0.0 {
                                        1.0
                                    } else if xd[j] < 0.0 {
                                        -1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryKind::Relu => {
                                    if xd[j] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryKind::Sigmoid => out[j] * (1.0 - out[j]),
                            };
                    }
                });
            }
            Op::Binary(kind, a, b) => self.binary_backward(*kind, *a, *b, g, grads),
            Op::Scale(x, f) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.len(), |acc| acc.iter_mut().zip(g).for_each(|(a, v)| *a += f * v));
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.len(), |acc| acc.iter_mut().zip(g).for_each(|(a, v)| *a += v));
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                if self.wants(*x) {
                    let n = self.numel(*x);
                    let v = match node.op {
                        Op::Mean(_) => g[0] / n as f64,
                        _ => g[0],
                    };
                    accumulate(grads, *x, n, |acc| acc.iter_mut().for_each(|a| *a += v));
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let bt = transpose_raw(self.data(*b), k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    accumulate(grads, *a, m * k, |acc| acc.iter_mut().zip(&da).for_each(|(x, y)| *x += y));
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let at = transpose_raw(self.data(*a), m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    accumulate(grads, *b, k * n, |acc| acc.iter_mut().zip(&db).for_each(|(x, y)| *x += y));
                }
            }
            Op::Transpose(x) => {
                if self.wants(*x) {
                    let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let gt = transpose_raw(g, n, m);
                    accumulate(grads, *x, m * n, |acc| acc.iter_mut().zip(&gt).for_each(|(a, v)| *a += v));
                }
            }
            Op::Slice { x, start } => {
                if self.wants(*x) {
                    let n = self.numel(*x);
                    accumulate(grads, *x, n, |acc| {
                        acc[*start..*start + g.len()].iter_mut().zip(g).for_each(|(a, v)| *a += v)
                    });
                }
            }
            Op::Concat { parts, outer, inner } => {
                let total: usize = inner.iter().sum();
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(inner) {
                    if self.wants(p) {
                        accumulate(grads, p, outer * w, |acc| {
                            for o in 0..*outer {
                                let src = &g[o * total + offset..o * total + offset + w];
                                acc[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(a, v)| *a += v);
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::GatherRows { x, rows } => {
                if self.wants(*x) {
                    let d = self.shape(*x)[1];
                    accumulate(grads, *x, self.numel(*x), |acc| {
                        for (i, &r) in rows.iter().enumerate() {
                            acc[r * d..(r + 1) * d]
                                .iter_mut()
                                .zip(&g[i * d..(i + 1) * d])
                                .for_each(|(a, v)| *a += v);
                        }
                    });
                }
            }
            Op::ScatterAddRows { x, rows } => {
                if self.wants(*x) {
                    let d = self.shape(*x)[1];
                    accumulate(grads, *x, self.numel(*x), |acc| {
                        for (i, &r) in rows.iter().enumerate() {
                            acc[i * d..(i + 1) * d]
                                .iter_mut()
                                .zip(&g[r * d..(r + 1) * d])
                                .for_each(|(a, v)| *a += v);
                        }
                    });
                }
            }
            Op::Gather { x, index } => {
                if self.wants(*x) {
                    accumulate(grads, *x, self.numel(*x), |acc| {
                        for (k, &j) in index.iter().enumerate() {
                            acc[j] += g[k];
                        }
                    });
                }
            }
            Op::AddRowBias(x, b) | Op::AddColBias(x, b) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.len(), |acc| acc.iter_mut().zip(g).for_each(|(a, v)| *a += v));
                }
                if self.wants(*b) {
                    let n = self.shape(*x)[1];
                    let row = matches!(node.op, Op::AddRowBias(..));
                    accumulate(grads, *b, self.numel(*b), |acc| {
                        for (j, v) in g.iter().enumerate() {
                            acc[if row { j % n } else { j / n }] += v;
                        }
                    });
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => self.conv_backward(*input, *kernel, *bias, *stride, *pad, node.value.shape(), g, grads),
            Op::Sparse { x, map } => {
                if self.wants(*x) {
                    accumulate(grads, *x, self.numel(*x), |acc| {
                        for (r, gv) in g.iter().enumerate() {
                            for &(j, wt) in map.row(r) {
                                acc[j] += wt * gv;
                            }
                        }
                    });
                }
            }
            Op::DeformConv {
                input,
                weight,
                offsets,
                shared,
                samples,
            } => self.deform_backward(*input, *weight, *offsets, *shared, samples, g, grads),
            Op::Focal {
                pred,
                target,
                alpha,
                beta,
                norm,
            } => {
                if self.wants(*pred) {
                    let pd = self.data(*pred);
                    let s = g[0] / norm;
                    accumulate(grads, *pred, pd.len(), |acc| {
                        for j in 0..pd.len() {
                            acc[j] += s * focal_term(pd[j], target[j], *alpha, *beta).1;
                        }
                    });
                }
            }
            Op::Dice { pred, target, eps } => {
                if self.wants(*pred) {
                    let pd = self.data(*pred);
                    let (inter, union) = dice_parts(pd, target);
                    let den = union + eps;
                    let num = 2.0 * inter + eps;
                    accumulate(grads, *pred, pd.len(), |acc| {
                        for j in 0..pd.len() {
                            let d = -(2.0 * target[j] * den - num * 2.0 * pd[j]) / (den * den);
                            acc[j] += g[0] * d;
                        }
                    });
                }
            }
            Op::Bce { pred, labels, eps } => {
                if self.wants(*pred) {
                    let pd = self.data(*pred);
                    let n = labels.len() as f64;
                    accumulate(grads, *pred, pd.len(), |acc| {
                        for j in 0..pd.len() {
                            let p = pd[j];
                            if p < *eps || p > 1.0 - eps {
                                continue;
                            }
                            let y = labels[j];
                            acc[j] += g[0] * (-(y / p) + (1.0 - y) / (1.0 - p)) / n;
                        }
                    });
                }
            }
        }
    }

    fn binary_backward(&self, kind: BinaryKind, a: Var, b: Var, g: &[f64], grads: &mut Grads) {
        let (ad, bd) = (self.data(a), self.data(b));
        let (na, nb) = (ad.len(), bd.len());
        let n = g.len();
        let at = |j: usize| if na == 1 { ad[0] } else { ad[j] };
        let bt = |j: usize| if nb == 1 { bd[0] } else { bd[j] };
        for (v, len, first) in [(a, na, true), (b, nb, false)] {
            if !self.wants(v) {
                continue;
            }
            accumulate(grads, v, len, |acc| {
                for j in 0..n {
                    let d = match (kind, first) {
                        (BinaryKind::Add, _) => g[j],
                        (BinaryKind::Sub, true) => g[j],
                        (BinaryKind::Sub, false) => -g[j],
                        (BinaryKind::Mul, true) => g[j] * bt(j),
                        (BinaryKind::Mul, false) => g[j] * at(j),
                    };
                    acc[if len == 1 { 0 } else { j }] += d;
                }
            });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        out_shape: &[usize],
        g: &[f64],
        grads: &mut Grads,
    ) {
        let (ci, h, w) = (self.shape(input)[0], self.shape(input)[1], self.shape(input)[2]);
        let k = self.shape(kernel)[2];
        let (co, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
        let x = self.data(input);
        let kd = self.data(kernel);
        if let Some(b) = bias {
            if self.wants(b) {
                accumulate(grads, b, co, |acc| {
                    for o in 0..co {
                        acc[o] += g[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
                    }
                });
            }
        }
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
        let (rows, n) = (ci * k * k, oh * ow);
        if self.wants(kernel) {
            let cols = geo.im2col(x);
            accumulate(grads, kernel, kd.len(), |acc| {
                for o in 0..co {
                    let gr = &g[o * n..(o + 1) * n];
                    for r in 0..rows {
                        acc[o * rows + r] += dot(gr, &cols[r * n..(r + 1) * n]);
                    }
                }
            });
        }
        if self.wants(input) {
            let kt = transpose_raw(kd, co, rows);
            let dcols = matmul_raw(&kt, g, rows, co, n);
            accumulate(grads, input, x.len(), |acc| geo.col2im(&dcols, acc));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn deform_backward(
        &self,
        input: Var,
        weight: Var,
        offsets: Var,
        shared: bool,
        samples: &[f64],
        g: &[f64],
        grads: &mut Grads,
    ) {
        let (c, h, w) = (self.shape(input)[0], self.shape(input)[1], self.shape(input)[2]);
        let hw = h * w;
        let wd = self.data(weight);
        let co = g.len() / hw;
        if self.wants(weight) {
            accumulate(grads, weight, wd.len(), |acc| {
                for ch in 0..c {
                    for tap in 0..9 {
                        let s = &samples[(ch * 9 + tap) * hw..(ch * 9 + tap + 1) * hw];
                        if shared {
                            let gp = &g[ch * hw..(ch + 1) * hw];
                            acc[tap] += gp.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        } else {
                            for o in 0..co {
                                let gp = &g[o * hw..(o + 1) * hw];
                                acc[(o * c + ch) * 9 + tap] += gp.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
            });
        }
        let want_in = self.wants(input);
        let want_off = self.wants(offsets);
        if !want_in && !want_off {
            return;
        }
        // gradient w.r.t. each sample value
        let mut gs = vec![0.0; c * 9 * hw];
        for ch in 0..c {
            for tap in 0..9 {
                let dst = &mut gs[(ch * 9 + tap) * hw..(ch * 9 + tap + 1) * hw];
                if shared {
                    let gp = &g[ch * hw..(ch + 1) * hw];
                    dst.iter_mut().zip(gp).for_each(|(d, v)| *d += wd[tap] * v);
                } else {
                    for o in 0..co {
                        let wt = wd[(o * c + ch) * 9 + tap];
                        let gp = &g[o * hw..(o + 1) * hw];
                        dst.iter_mut().zip(gp).for_each(|(d, v)| *d += wt * v);
                    }
                }
            }
        }
        let x = self.data(input);
        let off = self.data(offsets);
        let mut dx = if want_in { vec![0.0; x.len()] } else { vec![] };
        let mut doff = if want_off { vec![0.0; off.len()] } else { vec![] };
        for tap in 0..9 {
            let (ky, kx) = ((tap / 3) as f64 - 1.0, (tap % 3) as f64 - 1.0);
            for p in 0..hw {
                let (py, px) = ((p / w) as f64, (p % w) as f64);
                let sx = px + kx + off[(2 * tap) * hw + p];
                let sy = py + ky + off[(2 * tap + 1) * hw + p];
                let taps = bilinear_taps(h, w, sy, sx);
                let ly = sy - crate::math::floor(sy);
                let lx = sx - crate::math::floor(sx);
                let mut gy = 0.0;
                let mut gx = 0.0;
                for ch in 0..c {
                    let gv = gs[(ch * 9 + tap) * hw + p];
                    if gv == 0.0 {
                        continue;
                    }
                    let plane = &x[ch * hw..(ch + 1) * hw];
                    let v = |t: usize| taps[t].0.map_or(0.0, |i| plane[i]);
                    if want_in {
                        for &(idx, wt) in &taps {
                            if let Some(idx) = idx {
                                dx[ch * hw + idx] += gv * wt;
                            }
                        }
                    }
                    if want_off {
                        let (v00, v01, v10, v11) = (v(0), v(1), v(2), v(3));
                        gy += gv * ((1.0 - lx) * (v10 - v00) + lx * (v11 - v01));
                        gx += gv * ((1.0 - ly) * (v01 - v00) + ly * (v11 - v10));
                    }
                }
                if want_off {
                    doff[(2 * tap) * hw + p] += gx;
                    doff[(2 * tap + 1) * hw + p] += gy;
                }
            }
        }
        if want_in {
            accumulate(grads, input, x.len(), |acc| acc.iter_mut().zip(&dx).for_each(|(a, v)| *a += v));
        }
        if want_off {
            accumulate(grads, offsets, off.len(), |acc| acc.iter_mut().zip(&doff).for_each(|(a, v)| *a += v));
        }
    }
}

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}
