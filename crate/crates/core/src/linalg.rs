//! Small dense `f64` routines on row-major square matrices.

/// Lower Cholesky factor `L` with `A = L Lᵀ`, or `None` if `A` is not
/// (numerically) positive definite.
pub fn cholesky_lower(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), dim * dim);
    let mut l = vec![0.0f64; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = a[i * dim + j];
            for k in 0..j {
                sum -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if sum.is_nan() || sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * dim + i] = sum.sqrt();
            } else {
                l[i * dim + j] = sum / l[j * dim + j];
            }
        }
    }
    Some(l)
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn invert_lower(l: &[f64], dim: usize) -> Vec<f64> {
    let mut inv = vec![0.0f64; dim * dim];
    for col in 0..dim {
        // forward substitution on the unit vector e_col
        for i in col..dim {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                sum -= l[i * dim + k] * inv[k * dim + col];
            }
            inv[i * dim + col] = sum / l[i * dim + i];
        }
    }
    inv
}

/// `A⁻¹` for symmetric positive definite `A`, through its Cholesky factor:
/// `A⁻¹ = L⁻ᵀ L⁻¹`.
pub fn spd_inverse(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    let l = cholesky_lower(a, dim)?;
    let linv = invert_lower(&l, dim);
    let mut out = vec![0.0f64; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let start = i.max(j);
            let s: f64 = (start..dim).map(|k| linv[k * dim + i] * linv[k * dim + j]).sum();
            out[i * dim + j] = s;
            out[j * dim + i] = s;
        }
    }
    Some(out)
}

pub fn transpose(a: &[f64], dim: usize) -> Vec<f64> {
    let mut t = vec![0.0f64; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            t[j * dim + i] = a[i * dim + j];
        }
    }
    t
}
