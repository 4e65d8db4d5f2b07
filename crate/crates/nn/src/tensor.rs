//! Dense row-major `f64` tensors and the raw kernels the tape builds on.
//!
//! Every operation views a tensor as a matrix: the last extent is the column
//! count and the product of the others is the row count.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} needs {expected} values, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape {0:?} has a zero or missing extent")]
    BadShape(Vec<usize>),
    #[error("conv1d kernel width {0} is even")]
    EvenKernel(usize),
    #[error("glu needs an even last extent, got {0}")]
    OddExtent(usize),
    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::BadShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, TensorError> {
        let expected = check_shape(&shape)?;
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Matrix constructor; panics on a zero extent or length mismatch.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![rows, cols], data).expect("matrix shape")
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = check_shape(shape).expect("non-empty shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::matrix(1, 1, vec![value])
    }

    pub fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(TensorError::ShapeMismatch {
                op: "from_rows",
                left: vec![cols],
                right: vec![bad.len()],
            });
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let n = check_shape(&shape)?;
        if n != self.data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected: n,
                got: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn as_matrix(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
pub(crate) fn gemm_at_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

/// `out[m×k] += g · bᵀ` where `g` is `m×n` and `b` is `k×n`.
pub(crate) fn gemm_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, k) = a.as_matrix();
    let (k2, n) = b.as_matrix();
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm_acc(&a.data, &b.data, &mut out, m, k, n);
    Ok(Tensor::matrix(m, n, out))
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = a.as_matrix();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::matrix(n, m, out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax over the last axis.
pub fn softmax_rows(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    let c = a.cols();
    for row in out.data.chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Row-wise normalization to zero mean and unit variance. Returns the
/// normalized tensor and the per-row inverse standard deviations.
pub fn layer_norm_rows(a: &Tensor) -> (Tensor, Vec<f64>) {
    let mut out = a.clone();
    let c = a.cols();
    let mut inv = Vec::with_capacity(a.rows());
    for row in out.data.chunks_mut(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for x in row.iter_mut() {
            *x = (*x - mean) * s;
        }
        inv.push(s);
    }
    (out, inv)
}

/// Sliding windows for a centered, zero-padded convolution: row `i` holds
/// input rows `i - k/2 ..= i + k/2` concatenated.
pub fn unfold(a: &Tensor, k: usize) -> Result<Tensor, TensorError> {
    if k.is_multiple_of(2) {
        return Err(TensorError::EvenKernel(k));
    }
    let (m, d) = a.as_matrix();
    let half = k / 2;
    let mut out = vec![0.0; m * k * d];
    for i in 0..m {
        for j in 0..k {
            let src = i as isize + j as isize - half as isize;
            if src < 0 || src >= m as isize {
                continue;
            }
            let src = src as usize;
            out[(i * k + j) * d..(i * k + j + 1) * d].copy_from_slice(&a.data[src * d..(src + 1) * d]);
        }
    }
    Ok(Tensor::matrix(m, k * d, out))
}

/// Same-length 1-D convolution over rows. `kernel` is `[k × d_in × d_out]`.
pub fn conv1d(input: &Tensor, kernel: &Tensor) -> Result<Tensor, TensorError> {
    let ks = kernel.shape();
    if ks.len() != 3 || ks[1] != input.cols() {
        return Err(mismatch("conv1d", input, kernel));
    }
    let windows = unfold(input, ks[0])?;
    let flat = kernel.clone().reshape(vec![ks[0] * ks[1], ks[2]])?;
    matmul(&windows, &flat)
}
