use super::{Masked, QuantError};

/// `Σ_i w_ij² / h_j²` over supported entries of each column.
pub fn column_saliency(w: Masked<'_>, hc_diag: &[f64]) -> Result<Vec<f64>, QuantError> {
    if hc_diag.len() != w.cols {
        return Err(QuantError::InvalidParameter(format!(
            "Hessian diagonal has {} entries for a block of width {}",
            hc_diag.len(),
            w.cols
        )));
    }
    if let Some((column, &value)) = hc_diag.iter().enumerate().find(|(_, h)| !(h.is_finite() && **h > 0.0)) {
        return Err(QuantError::DegenerateHessian { column, value });
    }
    let mut sal = vec![0.0f64; w.cols];
    for r in 0..w.rows {
        for c in 0..w.cols {
            let k = r * w.cols + c;
            if w.support[k] {
                sal[c] += w.values[k] * w.values[k] / (hc_diag[c] * hc_diag[c]);
            }
        }
    }
    Ok(sal)
}

/// Squared error of binarizing, row by row, the supported entries whose
/// column satisfies `in_set`.
pub(super) fn split_binarize_error(w: Masked<'_>, in_set: &[bool]) -> f64 {
    let mut total = 0.0;
    for r in 0..w.rows {
        for want in [true, false] {
            let entries = (0..w.cols)
                .filter(|&c| in_set[c] == want && w.support[r * w.cols + c])
                .map(|c| w.values[r * w.cols + c].abs());
            let (sum, count) = entries.clone().fold((0.0, 0usize), |(s, n), a| (s + a, n + 1));
            if count == 0 {
                continue;
            }
            let alpha = sum / count as f64;
            total += entries.map(|a| (a - alpha) * (a - alpha)).sum::<f64>();
        }
    }
    total
}

/// Improvements smaller than this fraction of the block energy count as ties.
pub(super) const TIE_TOLERANCE: f64 = 1e-12;

/// Salient columns of a (masked) block, ascending.
///
/// Candidates are the `ceil(budget_cap · width)` columns with the largest
/// [`column_saliency`]. Every prefix of that ranking is tried: the prefix
/// columns and the remaining columns are binarized separately and the
/// prefix with the smallest total squared error wins, the shorter prefix on
/// ties.
pub fn select_salient(w: Masked<'_>, hc_diag: &[f64], budget_cap: f64) -> Result<Vec<usize>, QuantError> {
    if !(budget_cap > 0.0 && budget_cap <= 1.0) {
        return Err(QuantError::InvalidParameter(format!("salient budget cap {budget_cap} not in (0, 1]")));
    }
    let saliency = column_saliency(w, hc_diag)?;
    if w.cols == 0 {
        return Ok(Vec::new());
    }
    let mut ranking: Vec<usize> = (0..w.cols).collect();
    ranking.sort_by(|&a, &b| saliency[b].total_cmp(&saliency[a]));
    let k = ((budget_cap * w.cols as f64).ceil() as usize).clamp(1, w.cols);

    let tol = TIE_TOLERANCE * w.energy();
    let mut in_set = vec![false; w.cols];
    let mut best = (f64::INFINITY, 0usize);
    for (i, &col) in ranking.iter().take(k).enumerate() {
        in_set[col] = true;
        let err = split_binarize_error(w, &in_set);
        if err < best.0 - tol {
            best = (err, i + 1);
        }
    }
    let mut chosen = ranking[..best.1].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}
