//! Dense 64-bit tensors and the handful of kernels the model needs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Returns `None` when `data.len()` does not match the product of `dims`.
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Option<Self> {
        (dims.iter().product::<usize>() == data.len()).then(|| Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    pub fn cols(&self) -> usize {
        self.dims.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims == other.dims
    }

    /// `self += alpha * other`, elementwise.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// `self += v`, elementwise over the flat data.
    pub(crate) fn axpy_slice(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.data.len());
        for (a, b) in self.data.iter_mut().zip(v) {
            *a += b;
        }
    }

    /// `self += outer(left, right)` for a 2-D tensor.
    pub(crate) fn add_outer(&mut self, left: &[f64], right: &[f64]) {
        let cols = self.cols();
        debug_assert_eq!(left.len(), self.rows());
        debug_assert_eq!(right.len(), cols);
        for (r, &l) in left.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            let row = &mut self.data[r * cols..(r + 1) * cols];
            for (w, &x) in row.iter_mut().zip(right) {
                *w += l * x;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dot_f32(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum()
}

/// `out += W[:, offset..offset + x.len()] * x` for a row-major 2-D `W`.
pub(crate) fn gemv_cols_acc(w: &Tensor, x: &[f64], offset: usize, out: &mut [f64]) {
    let cols = w.cols();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.data[r * cols + offset..r * cols + offset + x.len()];
        *o += dot(row, x);
    }
}

pub(crate) fn gemv_cols_acc_f32(w: &Tensor, x: &[f32], offset: usize, out: &mut [f64]) {
    let cols = w.cols();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.data[r * cols + offset..r * cols + offset + x.len()];
        *o += dot_f32(row, x);
    }
}

/// `out += W^T * v` for a row-major 2-D `W`.
pub(crate) fn gemv_t_acc(w: &Tensor, v: &[f64], out: &mut [f64]) {
    let cols = w.cols();
    for (r, &s) in v.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let row = &w.data[r * cols..(r + 1) * cols];
        for (o, &x) in out.iter_mut().zip(row) {
            *o += s * x;
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
