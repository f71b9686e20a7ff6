//! Calibration Hessian and block-wise error feedback.
//!
//! For a layer `y = W x` with calibration samples as rows of `X`, the
//! squared-output-error Hessian over input features is `H = 2 XᵀX`. After a
//! block of columns `[b, e)` is quantized, its error is pushed onto the
//! columns that are still unquantized:
//!
//! ```text
//! E          = (W[:, b..e] − B[:, b..e]) / diag(U)[b..e]     (column-wise)
//! W[:, e..] -= E · U[b..e, e..]
//! ```
//!
//! where `U` is the upper-triangular factor with `UᵀU = (H + λI)⁻¹`.

use thiserror::Error;

use crate::linalg;
use crate::tensor::Tensor2D;

/// Retries after the first attempt; each multiplies the damping by 10.
pub const MAX_DAMPING_RETRIES: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HessianError {
    #[error("H + lambda*I is not positive definite even with lambda = {lambda}")]
    NotPositiveDefinite { lambda: f64 },
    #[error("calibration matrix has no rows")]
    EmptyCalibration,
    #[error("relative damping {0} must be positive")]
    BadDamping(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianContext {
    dim: usize,
    /// Row-major upper-triangular factor.
    factor: Vec<f64>,
    pub lambda_used: f64,
    pub retries: u32,
}

impl HessianContext {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn factor(&self, i: usize, j: usize) -> f64 {
        self.factor[i * self.dim + j]
    }

    pub fn factor_matrix(&self) -> &[f64] {
        &self.factor
    }

    /// Factor diagonal for columns `[start, end)`.
    pub fn diagonal(&self, start: usize, end: usize) -> Vec<f64> {
        (start..end).map(|j| self.factor(j, j)).collect()
    }
}

/// `2 XᵀX`, feature by feature.
pub fn gram(x: &Tensor2D) -> Vec<f64> {
    let d = x.cols();
    let mut h = vec![0.0f64; d * d];
    for s in 0..x.rows() {
        let row: Vec<f64> = x.row(s).iter().map(|&v| f64::from(v)).collect();
        for i in 0..d {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..=i {
                h[i * d + j] += xi * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = 2.0 * h[i * d + j];
            h[i * d + j] = v;
            h[j * d + i] = v;
        }
    }
    h
}

/// Damped inverse-Hessian factor. The damping is `lambda_rel` times the mean
/// Hessian diagonal (or `lambda_rel` itself when that mean is zero), grown
/// tenfold per failed factorization.
pub fn build_hessian(x: &Tensor2D, lambda_rel: f64) -> Result<HessianContext, HessianError> {
    if x.rows() == 0 {
        return Err(HessianError::EmptyCalibration);
    }
    if !(lambda_rel > 0.0 && lambda_rel.is_finite()) {
        return Err(HessianError::BadDamping(lambda_rel));
    }
    let dim = x.cols();
    let h = gram(x);
    let mean_diag = (0..dim).map(|i| h[i * dim + i]).sum::<f64>() / dim.max(1) as f64;
    let base = if mean_diag > 0.0 { lambda_rel * mean_diag } else { lambda_rel };

    let mut lambda = base;
    for retries in 0..=MAX_DAMPING_RETRIES {
        lambda = base * 10f64.powi(retries as i32);
        let mut damped = h.clone();
        for i in 0..dim {
            damped[i * dim + i] += lambda;
        }
        let factor = linalg::spd_inverse(&damped, dim)
            .and_then(|inv| linalg::cholesky_lower(&inv, dim))
            .map(|l| linalg::transpose(&l, dim));
        if let Some(factor) = factor {
            return Ok(HessianContext { dim, factor, lambda_used: lambda, retries });
        }
    }
    Err(HessianError::NotPositiveDefinite { lambda })
}

/// Propagates the quantization error of columns `[start, end)` into columns
/// `end..`. `quantized` is the block's row-major reconstruction. Returns the
/// Frobenius norm of the applied update.
pub fn compensate_block(w: &mut Tensor2D, quantized: &[f32], ctx: &HessianContext, start: usize, end: usize) -> f64 {
    let (rows, cols) = w.shape();
    assert!(start <= end && end <= cols && cols == ctx.dim, "block out of range");
    let width = end - start;
    assert_eq!(quantized.len(), rows * width);
    if end == cols || width == 0 {
        return 0.0;
    }
    let diag = ctx.diagonal(start, end);
    let mut update_sq = 0.0;
    let mut err = vec![0.0f64; width];
    let mut delta = vec![0.0f64; cols - end];
    for r in 0..rows {
        for j in 0..width {
            err[j] = (f64::from(w.get(r, start + j)) - f64::from(quantized[r * width + j])) / diag[j];
        }
        delta.iter_mut().for_each(|d| *d = 0.0);
        for (j, &e) in err.iter().enumerate() {
            if e == 0.0 {
                continue;
            }
            for (t, d) in delta.iter_mut().enumerate() {
                *d += e * ctx.factor(start + j, end + t);
            }
        }
        for (t, &d) in delta.iter().enumerate() {
            let col = end + t;
            w.set(r, col, (f64::from(w.get(r, col)) - d) as f32);
            update_sq += d * d;
        }
    }
    update_sq.sqrt()
}
