//! Weight-importance scores used to choose which entries survive N:M pruning.
//!
//! Three scorers are provided:
//!
//! * **Standardized importance**: the relative magnitude
//!   `|w_ij| / Σ_j |w_ij| + |w_ij| / Σ_i |w_ij|`, standardized to zero mean and
//!   unit (population) variance over the whole layer, times the L2 norm of the
//!   matching input feature `‖X_{:,j}‖₂`.
//! * **Magnitude**: `|w_ij|`.
//! * **Activation weighted**: `|w_ij| · ‖X_{:,j}‖₂`.
//!
//! Row sums, column sums and the standardization statistics are always taken
//! over the full layer, even when a caller scores one column block at a time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor2D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("{axis} {index} has zero L1 mass; relative magnitude is undefined")]
    DegenerateAxis { axis: Axis, index: usize },
    #[error("calibration has {calib} features but weight has {weight} columns")]
    FeatureMismatch { weight: usize, calib: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Column,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Row => "row",
            Axis::Column => "column",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    StandardizedImportance,
    Magnitude,
    ActivationWeighted,
}

impl std::str::FromStr for ScorerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "si" => Ok(Self::StandardizedImportance),
            "magnitude" => Ok(Self::Magnitude),
            "actweighted" => Ok(Self::ActivationWeighted),
            other => Err(format!("unknown scorer '{other}' (si|magnitude|actweighted)")),
        }
    }
}

/// Row-major score matrix, same shape as the weight it scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), rows * cols, "score length does not match shape");
        debug_assert!(scores.iter().all(|s| s.is_finite()));
        Self { rows, cols, scores }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.cols + col]
    }
}

fn abs_sums(w: &Tensor2D) -> (Vec<f64>, Vec<f64>) {
    let mut row_l1 = vec![0.0f64; w.rows()];
    let mut col_l1 = vec![0.0f64; w.cols()];
    for (r, row_sum) in row_l1.iter_mut().enumerate() {
        for (c, &v) in w.row(r).iter().enumerate() {
            let a = f64::from(v).abs();
            *row_sum += a;
            col_l1[c] += a;
        }
    }
    (row_l1, col_l1)
}

#[inline]
fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn relative_magnitude_with(w: &Tensor2D, row_l1: &[f64], col_l1: &[f64], col_start: usize) -> ScoreMatrix {
    let mut out = Vec::with_capacity(w.rows() * w.cols());
    for (r, &row_sum) in row_l1.iter().enumerate() {
        for (c, &v) in w.row(r).iter().enumerate() {
            let a = f64::from(v).abs();
            out.push(ratio_or_zero(a, row_sum) + ratio_or_zero(a, col_l1[col_start + c]));
        }
    }
    ScoreMatrix::new(w.rows(), w.cols(), out)
}

/// Relative magnitude of every entry. An all-zero row or column contributes
/// zero for its term instead of failing.
pub fn relative_magnitude(w: &Tensor2D) -> ScoreMatrix {
    let (row_l1, col_l1) = abs_sums(w);
    relative_magnitude_with(w, &row_l1, &col_l1, 0)
}

/// Like [`relative_magnitude`] but refuses all-zero rows or columns.
pub fn relative_magnitude_checked(w: &Tensor2D) -> Result<ScoreMatrix, ScoringError> {
    let (row_l1, col_l1) = abs_sums(w);
    if let Some(index) = row_l1.iter().position(|&s| s == 0.0) {
        return Err(ScoringError::DegenerateAxis { axis: Axis::Row, index });
    }
    if let Some(index) = col_l1.iter().position(|&s| s == 0.0) {
        return Err(ScoringError::DegenerateAxis { axis: Axis::Column, index });
    }
    Ok(relative_magnitude_with(w, &row_l1, &col_l1, 0))
}

/// Population mean and standard deviation.
fn moments(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn standardize_with(mu: &ScoreMatrix, mean: f64, std: f64) -> ScoreMatrix {
    let scores =
        if std == 0.0 { vec![0.0; mu.scores.len()] } else { mu.scores.iter().map(|v| (v - mean) / std).collect() };
    ScoreMatrix::new(mu.rows, mu.cols, scores)
}

/// `(x − mean) / std` over all entries; a constant input maps to zeros.
pub fn standardize(mu: &ScoreMatrix) -> ScoreMatrix {
    let (mean, std) = moments(&mu.scores);
    standardize_with(mu, mean, std)
}

fn check_features(w: &Tensor2D, x: &Tensor2D) -> Result<(), ScoringError> {
    if w.cols() != x.cols() {
        return Err(ScoringError::FeatureMismatch { weight: w.cols(), calib: x.cols() });
    }
    Ok(())
}

/// Standardized importance of every weight.
pub fn si_scores(w: &Tensor2D, x: &Tensor2D) -> Result<ScoreMatrix, ScoringError> {
    let ctx = LayerScorer::new(ScorerKind::StandardizedImportance, w, x)?;
    Ok(ctx.score_block(w, 0))
}

pub fn baseline_scores(kind: ScorerKind, w: &Tensor2D, x: &Tensor2D) -> Result<ScoreMatrix, ScoringError> {
    let ctx = LayerScorer::new(kind, w, x)?;
    Ok(ctx.score_block(w, 0))
}

/// Layer-global scoring state, reused for every column block of the layer.
#[derive(Debug, Clone)]
pub struct LayerScorer {
    kind: ScorerKind,
    feature_norms: Vec<f64>,
    row_l1: Vec<f64>,
    col_l1: Vec<f64>,
    mean: f64,
    std: f64,
}

impl LayerScorer {
    pub fn new(kind: ScorerKind, w: &Tensor2D, x: &Tensor2D) -> Result<Self, ScoringError> {
        check_features(w, x)?;
        let feature_norms = x.column_l2_norms();
        let (row_l1, col_l1) = abs_sums(w);
        let (mean, std) = if kind == ScorerKind::StandardizedImportance {
            moments(&relative_magnitude_with(w, &row_l1, &col_l1, 0).scores)
        } else {
            (0.0, 0.0)
        };
        Ok(Self { kind, feature_norms, row_l1, col_l1, mean, std })
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    /// Scores the block of columns `[col_start, col_start + block.cols())`
    /// using its current values and the layer-global statistics.
    pub fn score_block(&self, block: &Tensor2D, col_start: usize) -> ScoreMatrix {
        let norms = &self.feature_norms[col_start..col_start + block.cols()];
        match self.kind {
            ScorerKind::StandardizedImportance => {
                let mu = relative_magnitude_with(block, &self.row_l1, &self.col_l1, col_start);
                let mut s = standardize_with(&mu, self.mean, self.std);
                for r in 0..s.rows {
                    for (v, n) in s.scores[r * s.cols..(r + 1) * s.cols].iter_mut().zip(norms) {
                        *v *= n;
                    }
                }
                s
            }
            ScorerKind::Magnitude => {
                ScoreMatrix::new(block.rows(), block.cols(), block.data().iter().map(|v| f64::from(v.abs())).collect())
            }
            ScorerKind::ActivationWeighted => {
                let mut out = Vec::with_capacity(block.rows() * block.cols());
                for r in 0..block.rows() {
                    out.extend(block.row(r).iter().zip(norms).map(|(v, n)| f64::from(v.abs()) * n));
                }
                ScoreMatrix::new(block.rows(), block.cols(), out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::synth_layer;

    fn t(rows: &[Vec<f32>]) -> Tensor2D {
        Tensor2D::from_rows(rows).unwrap()
    }

    #[test]
    fn relative_magnitude_examples() {
        let ones = relative_magnitude(&t(&[vec![1.0, 1.0], vec![1.0, 1.0]]));
        assert!(ones.scores().iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let diag = relative_magnitude(&t(&[vec![2.0, 0.0], vec![0.0, 2.0]]));
        assert_eq!(diag.scores(), &[2.0, 0.0, 0.0, 2.0]);

        let m = relative_magnitude(&t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        assert!((m.get(0, 0) - (1.0 / 3.0 + 1.0 / 4.0)).abs() < 1e-12);
        assert!((m.get(0, 0) - 0.5833).abs() < 1e-4);
    }

    #[test]
    fn degenerate_axis_fallback_and_checked_error() {
        let w = t(&[vec![0.0, 0.0], vec![1.0, 3.0]]);
        let m = relative_magnitude(&w);
        assert_eq!(&m.scores()[..2], &[0.0, 0.0]);
        // row 1: 1/4 + 1/1, 3/4 + 3/3
        assert!((m.get(1, 0) - 1.25).abs() < 1e-12);
        assert!((m.get(1, 1) - 1.75).abs() < 1e-12);
        assert_eq!(relative_magnitude_checked(&w), Err(ScoringError::DegenerateAxis { axis: Axis::Row, index: 0 }));
        let w = t(&[vec![1.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(relative_magnitude_checked(&w), Err(ScoringError::DegenerateAxis { axis: Axis::Column, index: 1 }));
    }

    #[test]
    fn standardize_examples() {
        let flat = standardize(&ScoreMatrix::new(2, 2, vec![3.0; 4]));
        assert_eq!(flat.scores(), &[0.0; 4]);
        let two = standardize(&ScoreMatrix::new(1, 2, vec![0.0, 2.0]));
        assert_eq!(two.scores(), &[-1.0, 1.0]);
    }

    #[test]
    fn si_zero_feature_and_constant_magnitude() {
        let w = t(&[vec![1.0, -2.0, 0.5], vec![3.0, 0.1, -1.0]]);
        let x = t(&[vec![1.0, 0.0, 2.0], vec![-1.0, 0.0, 1.0]]);
        let s = si_scores(&w, &x).unwrap();
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(1, 1), 0.0);

        let ones = t(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let x = t(&[vec![5.0, -2.0]]);
        assert!(si_scores(&ones, &x).unwrap().scores().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn si_rejects_feature_mismatch() {
        let err = si_scores(&Tensor2D::zeros(2, 3), &Tensor2D::zeros(4, 2)).unwrap_err();
        assert_eq!(err, ScoringError::FeatureMismatch { weight: 3, calib: 2 });
    }

    /// Straight-line recomputation of the score, one entry at a time.
    fn si_oracle(w: &Tensor2D, x: &Tensor2D) -> Vec<f64> {
        let (n, m) = w.shape();
        let abs = |i: usize, j: usize| f64::from(w.get(i, j)).abs();
        let mut mu = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let row: f64 = (0..m).map(|k| abs(i, k)).sum();
                let col: f64 = (0..n).map(|k| abs(k, j)).sum();
                mu[i * m + j] = abs(i, j) / row + abs(i, j) / col;
            }
        }
        let mean = mu.iter().sum::<f64>() / mu.len() as f64;
        let std = (mu.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / mu.len() as f64).sqrt();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let norm: f64 = (0..x.rows()).map(|r| f64::from(x.get(r, j)).powi(2)).sum::<f64>().sqrt();
                out[i * m + j] = (mu[i * m + j] - mean) / std * norm;
            }
        }
        out
    }

    #[test]
    fn si_matches_oracle_on_synthetic_layer() {
        let rec = synth_layer(8, 16, 32, 3, 0.0);
        let s = si_scores(&rec.weight, &rec.calibration).unwrap();
        for (got, want) in s.scores().iter().zip(si_oracle(&rec.weight, &rec.calibration)) {
            assert!((got - want).abs() <= 1e-5 * want.abs().max(1e-12), "{got} vs {want}");
        }
    }

    #[test]
    fn block_scoring_slices_the_full_layer_scores() {
        let rec = synth_layer(6, 12, 20, 9, 0.3);
        let full = si_scores(&rec.weight, &rec.calibration).unwrap();
        let scorer = LayerScorer::new(ScorerKind::StandardizedImportance, &rec.weight, &rec.calibration).unwrap();
        let block = scorer.score_block(&rec.weight.column_slice(4, 8), 4);
        for r in 0..6 {
            for c in 0..4 {
                assert_eq!(block.get(r, c), full.get(r, c + 4));
            }
        }
    }

    #[test]
    fn baselines() {
        let w = t(&[vec![-3.0, 2.0]]);
        let x = t(&[vec![0.6, 1.0], vec![0.8, 0.0]]);
        let mag = baseline_scores(ScorerKind::Magnitude, &w, &x).unwrap();
        assert_eq!(mag.scores(), &[3.0, 2.0]);
        let aw = baseline_scores(ScorerKind::ActivationWeighted, &w, &x).unwrap();
        assert!((aw.get(0, 0) - 3.0).abs() < 1e-6 && (aw.get(0, 1) - 2.0).abs() < 1e-12);

        let w = t(&[vec![1.0, 1.0]]);
        let x = t(&[vec![2.0, 0.0], vec![0.0, 3.0]]);
        assert_eq!(baseline_scores(ScorerKind::ActivationWeighted, &w, &x).unwrap().scores(), &[2.0, 3.0]);

        let rec = synth_layer(4, 6, 10, 2, 0.0);
        let si = baseline_scores(ScorerKind::StandardizedImportance, &rec.weight, &rec.calibration).unwrap();
        assert_eq!(si, si_scores(&rec.weight, &rec.calibration).unwrap());
    }

    mod props {
        use super::*;
        use crate::rng::SplitMix64;
        use proptest::prelude::*;

        fn random(rows: usize, cols: usize, seed: u64) -> Tensor2D {
            let mut rng = SplitMix64::new(seed);
            Tensor2D::new(rows, cols, (0..rows * cols).map(|_| rng.next_normal() as f32).collect()).unwrap()
        }

        proptest! {
            #[test]
            fn standardized_output_has_zero_mean_unit_std(rows in 1usize..8, cols in 2usize..8, seed in 0u64..10_000) {
                let mu = relative_magnitude(&random(rows, cols, seed));
                let s = standardize(&mu);
                let (mean, std) = moments(s.scores());
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((std - 1.0).abs() < 1e-9);
            }

            #[test]
            fn scaling_calibration_scales_scores(seed in 0u64..10_000, c in 0.1f32..10.0) {
                let w = random(5, 7, seed);
                let x = random(9, 7, seed ^ 1);
                let base = si_scores(&w, &x).unwrap();
                let scaled = si_scores(&w, &x.scaled(c).unwrap()).unwrap();
                for (a, b) in base.scores().iter().zip(scaled.scores()) {
                    prop_assert!((a * f64::from(c) - b).abs() <= 1e-4 * b.abs().max(1e-6));
                }
            }

            #[test]
            fn column_permutation_is_equivariant(seed in 0u64..10_000, shift in 1usize..6) {
                let (rows, cols) = (4, 6);
                let w = random(rows, cols, seed);
                let x = random(8, cols, seed ^ 7);
                let perm: Vec<usize> = (0..cols).map(|j| (j + shift) % cols).collect();
                let permute = |t: &Tensor2D| {
                    let rowsv: Vec<Vec<f32>> = (0..t.rows()).map(|r| perm.iter().map(|&j| t.get(r, j)).collect()).collect();
                    Tensor2D::from_rows(&rowsv).unwrap()
                };
                let s = si_scores(&w, &x).unwrap();
                let sp = si_scores(&permute(&w), &permute(&x)).unwrap();
                for r in 0..rows {
                    for (jp, &j) in perm.iter().enumerate() {
                        prop_assert!((sp.get(r, jp) - s.get(r, j)).abs() < 1e-9);
                    }
                }
            }

            #[test]
            fn si_is_finite(seed in 0u64..10_000) {
                let mut w = random(4, 5, seed);
                w.set(0, 0, 0.0);
                let x = random(3, 5, seed + 1);
                prop_assert!(si_scores(&w, &x).unwrap().scores().iter().all(|v| v.is_finite()));
            }
        }

        #[test]
        fn identical_rows_and_columns_give_constant_relative_magnitude() {
            let w = Tensor2D::new(3, 4, vec![-2.5; 12]).unwrap();
            let m = relative_magnitude(&w);
            assert!(m.scores().iter().all(|&v| (v - m.scores()[0]).abs() < 1e-15));
        }
    }
}
