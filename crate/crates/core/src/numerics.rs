//! Dense row-major `f64` arrays and the handful of kernels the resampler and
//! the toy policy need: matmul, row softmax, layer norm, single-head
//! attention, and a central-difference gradient harness.
//!
//! There is no broadcasting. Callers reshape explicitly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default step for [`finite_diff_grad`].
pub const DEFAULT_FD_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Row-major array with explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(rows, cols)` of a 2-D array.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(NumericsError::Dimension(format!(
                "expected a 2-D array, got shape {other:?}"
            ))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(NumericsError::Dimension(format!(
                "cannot reshape {} values into {shape:?}",
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Element of a 2-D array. Panics when out of range.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn transpose(&self) -> Result<Self> {
        let (rows, cols) = self.dims2()?;
        Ok(Self::from_fn(cols, rows, |r, c| self.at(c, r)))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(NumericsError::Dimension(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(NumericsError::Dimension(format!(
            "matmul inner dimensions differ: {m}x{k} · {k2}x{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(DenseArray {
        shape: vec![m, n],
        data: out,
    })
}

/// Numerically stable softmax over each row.
pub fn softmax_rows(x: &DenseArray) -> Result<DenseArray> {
    let (rows, _) = x.dims2()?;
    let mut out = x.clone();
    for r in 0..rows {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Per-row layer normalization without affine parameters.
pub fn layer_norm_rows(x: &DenseArray, eps: f64) -> Result<DenseArray> {
    let (rows, cols) = x.dims2()?;
    if cols == 0 {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    for r in 0..rows {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    Ok(out)
}

/// Intermediates of one attention call, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// Attention weights `[Q×N]`, rows on the simplex.
    pub weights: DenseArray,
    /// `weights · v`.
    pub output: DenseArray,
}

/// Scaled dot-product attention `softmax(q·kᵀ/√d)·v`.
pub fn attention(q: &DenseArray, k: &DenseArray, v: &DenseArray) -> Result<DenseArray> {
    attention_with_weights(q, k, v).map(|t| t.output)
}

pub fn attention_with_weights(
    q: &DenseArray,
    k: &DenseArray,
    v: &DenseArray,
) -> Result<AttentionTrace> {
    let (_, dq) = q.dims2()?;
    let (nk, dk) = k.dims2()?;
    let (nv, _) = v.dims2()?;
    if dq != dk || dq == 0 {
        return Err(NumericsError::Dimension(format!(
            "query dim {dq} and key dim {dk} must agree and be >= 1"
        )));
    }
    if nk != nv {
        return Err(NumericsError::Dimension(format!(
            "{nk} keys but {nv} values"
        )));
    }
    let scores = matmul(q, &k.transpose()?)?.scale(1.0 / (dq as f64).sqrt());
    let weights = softmax_rows(&scores)?;
    let output = matmul(&weights, v)?;
    Ok(AttentionTrace { weights, output })
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_grad<F>(f: F, x: &DenseArray, eps: f64) -> Result<DenseArray>
where
    F: Fn(&DenseArray) -> f64,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(NumericsError::Evaluation(format!(
            "eps must be > 0, got {eps}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = DenseArray::zeros(x.shape.clone());
    for i in 0..x.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let plus = f(&probe);
        probe.data[i] = orig - eps;
        let minus = f(&probe);
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::Evaluation(format!(
                "non-finite evaluation at coordinate {i}"
            )));
        }
        grad.data[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}
