//! Elementwise, reduction, linear-algebra and shape operations.

use alloc::vec;
use alloc::vec::Vec;

use super::{BinaryKind, Op, Tape, UnaryKind, Var};
use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("op produced consistent shape")
}

impl Tape {
    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| match kind {
                UnaryKind::Abs => v.abs(),
                UnaryKind::Relu => v.max(0.0),
                UnaryKind::Sigmoid => math::sigmoid(v),
            })
            .collect();
        let out = tensor(xv.shape(), data);
        self.push(out, Op::Unary(kind, x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    /// Elementwise binary op. Shapes must match, or one side must hold a
    /// single element which is broadcast.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let (shape, data): (&[usize], Vec<f64>) = if av.shape() == bv.shape() {
            (av.shape(), av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect())
        } else if bv.len() == 1 {
            let y = bv.item();
            (av.shape(), av.data().iter().map(|&x| f(x, y)).collect())
        } else if av.len() == 1 {
            let x = av.item();
            (bv.shape(), bv.data().iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(Error::ShapeMismatch {
                op: match kind {
                    BinaryKind::Add => "add",
                    BinaryKind::Sub => "sub",
                    BinaryKind::Mul => "mul",
                },
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        };
        let out = tensor(shape, data);
        Ok(self.push(out, Op::Binary(kind, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let out = tensor(xv.shape(), xv.data().iter().map(|v| v * factor).collect());
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let out = tensor(xv.shape(), xv.data().iter().map(|v| v + c).collect());
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let m = if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 };
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = match (av.shape(), bv.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (l, r) => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    left: l.to_vec(),
                    right: r.to_vec(),
                })
            }
        };
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let out = tensor(&[m, n], out);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [m, n] = *xv.shape() else {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape: xv.shape().to_vec(),
                reason: "expected a matrix",
            });
        };
        let out = tensor(&[n, m], transpose_raw(xv.data(), m, n));
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Contiguous run of `shape.product()` elements starting at flat
    /// index `start`.
    pub fn slice(&mut self, x: Var, start: usize, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let xv = self.value(x);
        if start + n > xv.len() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                left: xv.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let out = tensor(shape, xv.data()[start..start + n].to_vec());
        Ok(self.push(out, Op::Slice { x, start }, &[x]))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: first,
                reason: "axis out of range",
            });
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first,
                    right: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let trailing: usize = first[axis + 1..].iter().product();
        let inner: Vec<usize> = parts.iter().map(|&p| self.shape(p)[axis] * trailing).collect();
        let total: usize = inner.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&inner) {
                data.extend_from_slice(&self.data(p)[o * w..(o + 1) * w]);
            }
        }
        let out = tensor(&out_shape, data);
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
            },
            parts,
        ))
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let [n, d] = *xv.shape() else {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                shape: xv.shape().to_vec(),
                reason: "expected a matrix",
            });
        };
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(Error::InvalidShape {
                    op: "gather_rows",
                    shape: xv.shape().to_vec(),
                    reason: "row index out of range",
                });
            }
            data.extend_from_slice(&xv.data()[r * d..(r + 1) * d]);
        }
        let out = tensor(&[rows.len(), d], data);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// Sums row `i` of `x` into row `rows[i]` of an `n_rows × d` zero matrix.
    pub fn scatter_add_rows(&mut self, x: Var, rows: &[usize], n_rows: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = match *xv.shape() {
            [e, d] if e == rows.len() => d,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "scatter_add_rows",
                    left: xv.shape().to_vec(),
                    right: vec![rows.len()],
                })
            }
        };
        let mut data = vec![0.0; n_rows * d];
        for (i, &r) in rows.iter().enumerate() {
            if r >= n_rows {
                return Err(Error::InvalidShape {
                    op: "scatter_add_rows",
                    shape: vec![n_rows, d],
                    reason: "row index out of range",
                });
            }
            let src = &xv.data()[i * d..(i + 1) * d];
            data[r * d..(r + 1) * d].iter_mut().zip(src).for_each(|(o, s)| *o += s);
        }
        let out = tensor(&[n_rows, d], data);
        Ok(self.push(
            out,
            Op::ScatterAddRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// Picks flat elements of `x` into a tensor of `shape`.
    pub fn gather(&mut self, x: Var, index: &[usize], shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::InvalidShape {
                op: "gather",
                shape: shape.to_vec(),
                reason: "index count does not match output shape",
            });
        }
        if index.iter().any(|&i| i >= xv.len()) {
            return Err(Error::InvalidShape {
                op: "gather",
                shape: xv.shape().to_vec(),
                reason: "index out of range",
            });
        }
        let data = index.iter().map(|&i| xv.data()[i]).collect();
        let out = tensor(shape, data);
        Ok(self.push(
            out,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// `x[m×n] + b[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = match *xv.shape() {
            [_, n] if bv.len() == n => n,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "add_row_bias",
                    left: xv.shape().to_vec(),
                    right: bv.shape().to_vec(),
                })
            }
        };
        let data = xv.data().iter().enumerate().map(|(i, v)| v + bv.data()[i % n]).collect();
        let out = tensor(xv.shape(), data);
        Ok(self.push(out, Op::AddRowBias(x, b), &[x, b]))
    }

    /// `x[m×n] + b[m]` broadcast over columns.
    pub fn add_col_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = match *xv.shape() {
            [m, n] if bv.len() == m => n,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "add_col_bias",
                    left: xv.shape().to_vec(),
                    right: bv.shape().to_vec(),
                })
            }
        };
        let data = xv.data().iter().enumerate().map(|(i, v)| v + bv.data()[i / n]).collect();
        let out = tensor(xv.shape(), data);
        Ok(self.push(out, Op::AddColBias(x, b), &[x, b]))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, &bv)| *o += av * bv);
        }
    }
    out
}

pub(crate) fn transpose_raw(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}
