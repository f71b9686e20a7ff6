use super::binarize::binarize_rowwise;
use super::salient::TIE_TOLERANCE;
use super::{BinaryAtom, Masked, QuantError, RegionCode, TrisectionParams};

/// Fractions `0.1 ..= 0.9`, evenly spaced, last point pinned to 0.9.
fn grid_fraction(k: usize, points: usize) -> f64 {
    if k + 1 == points {
        0.9
    } else {
        0.1 + k as f64 * (0.8 / (points - 1) as f64)
    }
}

/// Feasible break-point candidates for a region whose largest magnitude is
/// `max_abs`, in grid order. `p1 = f · max_abs` and `p2 = sigma · p1` are
/// rounded to `f32` (their stored precision); candidates with
/// `p2 > 0.9 · max_abs` are dropped.
pub fn trisection_grid(max_abs: f64, sigma_ratio: f64, grid_points: usize) -> Vec<TrisectionParams> {
    let limit = 0.9 * max_abs;
    (0..grid_points)
        .filter_map(|k| {
            let p1 = (grid_fraction(k, grid_points) * max_abs) as f32;
            let p2 = (sigma_ratio * f64::from(p1)) as f32;
            (f64::from(p2) <= limit).then_some(TrisectionParams { p1, p2 })
        })
        .collect()
}

fn supported_magnitudes(w: Masked<'_>) -> Vec<Vec<f64>> {
    (0..w.rows)
        .map(|r| (0..w.cols).filter(|&c| w.support[r * w.cols + c]).map(|c| w.values[r * w.cols + c].abs()).collect())
        .collect()
}

fn region_index(params: &TrisectionParams, magnitude: f64) -> usize {
    match params.classify(magnitude) {
        RegionCode::Sparse => 0,
        RegionCode::Intermediate => 1,
        _ => 2,
    }
}

/// Total squared error of per-row, per-region binarization under `params`.
fn trisection_error(rows: &[Vec<f64>], params: &TrisectionParams) -> f64 {
    let mut total = 0.0;
    for row in rows {
        let mut sum = [0.0f64; 3];
        let mut count = [0usize; 3];
        for &a in row {
            let g = region_index(params, a);
            sum[g] += a;
            count[g] += 1;
        }
        let alpha: [f64; 3] = std::array::from_fn(|g| if count[g] == 0 { 0.0 } else { sum[g] / count[g] as f64 });
        total += row
            .iter()
            .map(|&a| {
                let d = a - alpha[region_index(params, a)];
                d * d
            })
            .sum::<f64>();
    }
    total
}

/// Grid search for the trisection break-points with `p2 = sigma_ratio · p1`.
///
/// Returns the candidate with the smallest total squared error; on ties the
/// smaller `p1` wins. A region with no supported entries or only zeros gets
/// [`TrisectionParams::DEGENERATE`].
pub fn trisection_search(w: Masked<'_>, sigma_ratio: f64, grid_points: usize) -> Result<TrisectionParams, QuantError> {
    if sigma_ratio.is_nan() || sigma_ratio <= 1.0 || !sigma_ratio.is_finite() {
        return Err(QuantError::InvalidParameter(format!("sigma ratio {sigma_ratio} must exceed 1")));
    }
    if grid_points < 2 {
        return Err(QuantError::InvalidParameter(format!("grid needs at least 2 points, got {grid_points}")));
    }
    let max_abs = w.max_abs();
    if max_abs == 0.0 {
        return Ok(TrisectionParams::DEGENERATE);
    }
    let candidates = trisection_grid(max_abs, sigma_ratio, grid_points);
    if candidates.is_empty() {
        return Err(QuantError::NoFeasibleCandidate { sigma: sigma_ratio });
    }
    let rows = supported_magnitudes(w);
    let tol = TIE_TOLERANCE * w.energy();
    let mut best: Option<(f64, TrisectionParams)> = None;
    for cand in candidates {
        let err = trisection_error(&rows, &cand);
        match best {
            Some((e, _)) if err >= e - tol => {}
            _ => best = Some((err, cand)),
        }
    }
    Ok(best.expect("at least one candidate").1)
}

/// Squared error of every feasible grid candidate, in grid order. Empty for
/// an all-zero region or when no candidate is feasible.
pub fn trisection_curve(w: Masked<'_>, sigma_ratio: f64, grid_points: usize) -> Vec<(TrisectionParams, f64)> {
    let max_abs = w.max_abs();
    if max_abs == 0.0 {
        return Vec::new();
    }
    let rows = supported_magnitudes(w);
    trisection_grid(max_abs, sigma_ratio, grid_points)
        .into_iter()
        .map(|cand| (cand, trisection_error(&rows, &cand)))
        .collect()
}

/// Splits the supported entries into the three magnitude regions and
/// binarizes each one row-wise. Codes outside the support are `Pruned`.
pub fn trisection_quantize(
    w: Masked<'_>,
    params: &TrisectionParams,
) -> (BinaryAtom, BinaryAtom, BinaryAtom, Vec<RegionCode>) {
    let codes: Vec<RegionCode> = w
        .values
        .iter()
        .zip(w.support)
        .map(|(v, &s)| if s { params.classify(v.abs()) } else { RegionCode::Pruned })
        .collect();
    let region = |code: RegionCode| {
        let support: Vec<bool> = codes.iter().map(|&c| c == code).collect();
        binarize_rowwise(Masked { support: &support, ..w })
    };
    (region(RegionCode::Sparse), region(RegionCode::Intermediate), region(RegionCode::Dense), codes)
}
