//! Dense row-major `f32` matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {rows}x{cols}")]
    LengthMismatch { rows: usize, cols: usize, len: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
}

/// Row-major matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::LengthMismatch { rows, cols, len: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Writes one entry. Panics on a non-finite value, which would break the
    /// type's invariant.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        assert!(value.is_finite(), "non-finite write at ({row}, {col})");
        self.data[row * self.cols + col] = value;
    }

    /// Copy of columns `[start, end)`.
    pub fn column_slice(&self, start: usize, end: usize) -> Tensor2D {
        assert!(start <= end && end <= self.cols);
        let width = end - start;
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Tensor2D { rows: self.rows, cols: width, data }
    }

    /// L2 norm of every column, accumulated in `f64`.
    pub fn column_l2_norms(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.cols];
        for r in 0..self.rows {
            for (a, &v) in acc.iter_mut().zip(self.row(r)) {
                *a += f64::from(v) * f64::from(v);
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f32) -> Result<Tensor2D, TensorError> {
        Tensor2D::new(self.rows, self.cols, self.data.iter().map(|v| v * factor).collect())
    }
}

/// `‖a − b‖_F` accumulated in `f64`.
pub fn frobenius_distance(a: &Tensor2D, b: &Tensor2D) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Layer output error `‖X (a − b)ᵀ‖_F`, where `a`, `b` are `out × in` weights
/// and `x` holds one calibration sample per row.
pub fn output_error(a: &Tensor2D, b: &Tensor2D, x: &Tensor2D) -> f64 {
    assert_eq!(a.shape(), b.shape());
    assert_eq!(a.cols(), x.cols());
    let diff: Vec<f64> = a.data.iter().zip(&b.data).map(|(&p, &q)| f64::from(p) - f64::from(q)).collect();
    let cols = a.cols();
    let mut total = 0.0;
    for s in 0..x.rows() {
        let sample = x.row(s);
        for o in 0..a.rows() {
            let d = &diff[o * cols..(o + 1) * cols];
            let y: f64 = d.iter().zip(sample).map(|(&dv, &xv)| dv * f64::from(xv)).sum();
            total += y * y;
        }
    }
    total.sqrt()
}
