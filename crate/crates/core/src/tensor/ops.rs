//! Differentiable primitives.
//!
//! Broadcasting is deliberately narrow. `add`/`sub`/`mul` accept a right
//! operand that either has the same shape as the left one, is a per-row
//! column `[rows, 1]` repeated across the columns of a `[rows, D]` left
//! operand (the gate pattern), or holds a single element. Adding a bias
//! vector to every row goes through [`Tensor::add_row`]. Everything else is a
//! dimension error.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// tanh approximation of GELU.
    Gelu,
}

#[derive(Clone, Copy)]
enum Bcast {
    Same,
    /// `[rows, 1]` against `[rows, cols]`.
    Column { cols: usize },
    Scalar,
}

#[derive(Clone, Copy)]
enum Arith {
    Add,
    Sub,
    Mul,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `c[m,n] += a[m,k] * b[k,n]`, row-major. The reduction over `k` runs in
/// ascending order for every output element regardless of `n`.
fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`.
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    /// Width of the last axis and the number of rows above it.
    fn rows_cols(&self) -> (usize, usize) {
        let cols = *self.shape().last().expect("tensor has no axes");
        (self.numel() / cols, cols)
    }

    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = b.dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(), b.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(&self.data(), &b.data(), &mut out, m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            "matmul",
            vec![self.clone(), b.clone()],
            Box::new(move |g, inp, _| {
                let ga = inp[0].requires_grad().then(|| {
                    let bt = transpose_raw(&inp[1].data(), k, n);
                    let mut ga = vec![0.0; m * k];
                    gemm(g, &bt, &mut ga, m, n, k);
                    ga
                });
                let gb = inp[1].requires_grad().then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm_tn(&inp[0].data(), g, &mut gb, m, k, n);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose")?;
        let out = transpose_raw(&self.data(), r, c);
        Ok(Tensor::from_op(
            vec![c, r],
            out,
            "transpose",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(transpose_raw(g, c, r))]),
        ))
    }

    fn bcast_kind(&self, b: &Tensor, op: &'static str) -> Result<Bcast> {
        if self.shape() == b.shape() {
            return Ok(Bcast::Same);
        }
        if b.numel() == 1 {
            return Ok(Bcast::Scalar);
        }
        if let (&[r, c], &[br, 1]) = (self.shape(), b.shape()) {
            if r == br {
                return Ok(Bcast::Column { cols: c });
            }
        }
        Err(Error::dim(op, self.shape(), b.shape()))
    }

    fn arith(&self, b: &Tensor, kind: Arith, op: &'static str) -> Result<Tensor> {
        let bc = self.bcast_kind(b, op)?;
        let a_data = self.data();
        let b_data = b.data();
        let b_at = |i: usize| match bc {
            Bcast::Same => b_data[i],
            Bcast::Column { cols } => b_data[i / cols],
            Bcast::Scalar => b_data[0],
        };
        let out: Vec<f64> = a_data
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = b_at(i);
                match kind {
                    Arith::Add => x + y,
                    Arith::Sub => x - y,
                    Arith::Mul => x * y,
                }
            })
            .collect();
        let b_len = b.numel();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            op,
            vec![self.clone(), b.clone()],
            Box::new(move |g, inp, _| {
                let bv = inp[1].data();
                let b_at = |i: usize| match bc {
                    Bcast::Same => bv[i],
                    Bcast::Column { cols } => bv[i / cols],
                    Bcast::Scalar => bv[0],
                };
                let ga = inp[0].requires_grad().then(|| match kind {
                    Arith::Add | Arith::Sub => g.to_vec(),
                    Arith::Mul => g.iter().enumerate().map(|(i, gi)| gi * b_at(i)).collect(),
                });
                let gb = inp[1].requires_grad().then(|| {
                    let av = inp[0].data();
                    let mut gb = vec![0.0; b_len];
                    for (i, &gi) in g.iter().enumerate() {
                        let contrib = match kind {
                            Arith::Add => gi,
                            Arith::Sub => -gi,
                            Arith::Mul => gi * av[i],
                        };
                        let slot = match bc {
                            Bcast::Same => i,
                            Bcast::Column { cols } => i / cols,
                            Bcast::Scalar => 0,
                        };
                        gb[slot] += contrib;
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, b: &Tensor) -> Result<Tensor> {
        self.arith(b, Arith::Add, "add")
    }

    pub fn sub(&self, b: &Tensor) -> Result<Tensor> {
        self.arith(b, Arith::Sub, "sub")
    }

    pub fn mul(&self, b: &Tensor) -> Result<Tensor> {
        self.arith(b, Arith::Mul, "mul")
    }

    /// Adds a `[D]` vector to every row of a `[..., D]` tensor.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (_, cols) = self.rows_cols();
        if bias.shape() != [cols] {
            return Err(Error::dim("add_row", self.shape(), bias.shape()));
        }
        let bv = bias.data();
        let out: Vec<f64> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % cols])
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "add_row",
            vec![self.clone(), bias.clone()],
            Box::new(move |g, inp, _| {
                let gb = inp[1].requires_grad().then(|| {
                    let mut gb = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    gb
                });
                vec![Some(g.to_vec()), gb]
            }),
        ))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor {
        let out = self.data().iter().map(|x| scale * x + shift).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            "affine",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.iter().map(|v| v * scale).collect())]),
        )
    }

    pub fn activation(&self, act: Activation) -> Tensor {
        let out: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| match act {
                Activation::Relu => x.max(0.0),
                Activation::Sigmoid => sigmoid(x),
                Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            "activation",
            vec![self.clone()],
            Box::new(move |g, inp, out| {
                let x = inp[0].data();
                let gx = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| {
                        let d = match act {
                            // subgradient 0 at the kink
                            Activation::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::Sigmoid => out[i] * (1.0 - out[i]),
                            Activation::Gelu => {
                                let xi = x[i];
                                let t = (GELU_C * (xi + GELU_A * xi * xi * xi)).tanh();
                                0.5 * (1.0 + t)
                                    + 0.5 * xi * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * xi * xi)
                            }
                        };
                        gi * d
                    })
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        self.activation(Activation::Relu)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.activation(Activation::Sigmoid)
    }

    pub fn gelu(&self) -> Tensor {
        self.activation(Activation::Gelu)
    }

    /// Per-row normalization over the last axis followed by `gain * x + bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (rows, d) = self.rows_cols();
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::dim("layer_norm", self.shape(), gain.shape()));
        }
        if eps <= 0.0 {
            return Err(Error::Usage("layer_norm eps must be positive".into()));
        }
        let x = self.data();
        let gv = gain.data();
        let bv = bias.data();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "layer_norm",
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g, inp, _| {
                let gv = inp[1].data();
                let gx = inp[0].requires_grad().then(|| {
                    let mut gx = vec![0.0; rows * d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            gx[r * d + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    gx
                });
                let ggain = inp[1].requires_grad().then(|| {
                    let mut acc = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        acc[i % d] += gi * xhat[i];
                    }
                    acc
                });
                let gbias = inp[2].requires_grad().then(|| {
                    let mut acc = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        acc[i % d] += gi;
                    }
                    acc
                });
                vec![gx, ggain, gbias]
            }),
        ))
    }

    fn softmax_impl(&self, log: bool) -> Tensor {
        let (rows, v) = self.rows_cols();
        let x = self.data();
        let mut out = vec![0.0; rows * v];
        for r in 0..rows {
            let row = &x[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
            let lse = sum.ln();
            for j in 0..v {
                let shifted = row[j] - max;
                out[r * v + j] = if log { shifted - lse } else { shifted.exp() / sum };
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            if log { "log_softmax" } else { "softmax" },
            vec![self.clone()],
            Box::new(move |g, _, out| {
                let mut gx = vec![0.0; rows * v];
                for r in 0..rows {
                    let gr = &g[r * v..(r + 1) * v];
                    let yr = &out[r * v..(r + 1) * v];
                    if log {
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..v {
                            gx[r * v + j] = gr[j] - yr[j].exp() * gsum;
                        }
                    } else {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..v {
                            gx[r * v + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Max-shifted softmax over the last axis.
    pub fn softmax(&self) -> Tensor {
        self.softmax_impl(false)
    }

    pub fn log_softmax(&self) -> Tensor {
        self.softmax_impl(true)
    }

    pub fn concat_last(&self, b: &Tensor) -> Result<Tensor> {
        let sa = self.shape();
        let sb = b.shape();
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim("concat_last", sa, sb));
        }
        let (rows, d1) = self.rows_cols();
        let (_, d2) = b.rows_cols();
        let w = d1 + d2;
        let mut out = Vec::with_capacity(rows * w);
        {
            let av = self.data();
            let bv = b.data();
            for r in 0..rows {
                out.extend_from_slice(&av[r * d1..(r + 1) * d1]);
                out.extend_from_slice(&bv[r * d2..(r + 1) * d2]);
            }
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = w;
        Ok(Tensor::from_op(
            shape,
            out,
            "concat_last",
            vec![self.clone(), b.clone()],
            Box::new(move |g, _, _| {
                let mut ga = Vec::with_capacity(rows * d1);
                let mut gb = Vec::with_capacity(rows * d2);
                for row in g.chunks(w) {
                    ga.extend_from_slice(&row[..d1]);
                    gb.extend_from_slice(&row[d1..]);
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Columns `[start, start + len)` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let (rows, d) = self.rows_cols();
        if len == 0 || start + len > d {
            return Err(Error::dim("slice_last", self.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(rows * len);
        {
            let x = self.data();
            for r in 0..rows {
                out.extend_from_slice(&x[r * d + start..r * d + start + len]);
            }
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(Tensor::from_op(
            shape,
            out,
            "slice_last",
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; rows * d];
                for (r, row) in g.chunks(len).enumerate() {
                    gx[r * d + start..r * d + start + len].copy_from_slice(row);
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let s = self.data().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![s],
            "sum",
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().affine(1.0 / n, 0.0)
    }

    /// Hard threshold `x > threshold` in the forward pass with an identity
    /// backward (straight-through estimator).
    pub fn straight_through_step(&self, threshold: f64) -> Tensor {
        let out = self
            .data()
            .iter()
            .map(|&x| if x > threshold { 1.0 } else { 0.0 })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            "straight_through_step",
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        )
    }

    /// Scalar dot of a tensor against constant weights, `sum(x * w)`.
    /// Useful for turning any tensor into a scalar objective in tests.
    pub fn weighted_sum(&self, weights: &[f64]) -> Result<Tensor> {
        if weights.len() != self.numel() {
            return Err(Error::dim("weighted_sum", self.shape(), &[weights.len()]));
        }
        let w = Tensor::new(self.shape().to_vec(), weights.to_vec())?;
        Ok(self.mul(&w)?.sum())
    }
}
