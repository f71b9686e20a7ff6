use serde::{Deserialize, Serialize};

use crate::allocation::NMRatio;
use crate::scoring::ScoreMatrix;
use crate::tensor::Tensor2D;

use super::{
    apply_nm_mask, residual_binarize, select_salient, trisection_quantize, trisection_search, BlockQuantResult, Masked,
    QuantError, RegionAtoms, RegionCode, SalientAtoms,
};

/// Per-block search knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub salient_cap: f64,
    pub sigma_ratio: f64,
    pub grid_points: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self { salient_cap: 0.3, sigma_ratio: 2.0, grid_points: 160 }
    }
}

/// Steps of the per-block procedure, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scoring,
    Masking,
    SalientSelection,
    ResidualBinarization,
    Trisection,
    Compensation,
}

/// Quantizes the block of columns `[col_start, col_start + block.cols())`.
///
/// `scores` must have the block's shape and `hc_diag` holds the Hessian
/// factor's diagonal for the block's columns.
pub fn quantize_block(
    block: &Tensor2D,
    scores: &ScoreMatrix,
    nm: NMRatio,
    col_start: usize,
    hc_diag: &[f64],
    config: &BlockConfig,
) -> Result<BlockQuantResult, QuantError> {
    quantize_block_observed(block, scores, nm, col_start, hc_diag, config, &mut |_| {})
}

/// [`quantize_block`], calling `on_stage` as each stage finishes.
pub fn quantize_block_observed(
    block: &Tensor2D,
    scores: &ScoreMatrix,
    nm: NMRatio,
    col_start: usize,
    hc_diag: &[f64],
    config: &BlockConfig,
    on_stage: &mut dyn FnMut(Stage),
) -> Result<BlockQuantResult, QuantError> {
    let (rows, width) = block.shape();
    if scores.rows() != rows || scores.cols() != width {
        return Err(QuantError::InvalidParameter(format!(
            "scores are {}x{} for a {rows}x{width} block",
            scores.rows(),
            scores.cols()
        )));
    }
    let values: Vec<f64> = block.data().iter().map(|&v| f64::from(v)).collect();
    let nm_mask = apply_nm_mask(scores, nm.n, nm.m, col_start);
    on_stage(Stage::Masking);

    let salient_cols = select_salient(Masked::new(rows, width, &values, &nm_mask), hc_diag, config.salient_cap)?;
    let mut is_salient = vec![false; width];
    salient_cols.iter().for_each(|&c| is_salient[c] = true);
    on_stage(Stage::SalientSelection);

    let salient_support: Vec<bool> = (0..rows * width).map(|k| nm_mask[k] && is_salient[k % width]).collect();
    let rest_support: Vec<bool> = (0..rows * width).map(|k| nm_mask[k] && !is_salient[k % width]).collect();

    let (original, residual) = residual_binarize(Masked::new(rows, width, &values, &salient_support));
    on_stage(Stage::ResidualBinarization);
    let rest = Masked::new(rows, width, &values, &rest_support);
    let trisection = trisection_search(rest, config.sigma_ratio, config.grid_points)?;
    let (sparse, intermediate, dense, mut region_codes) = trisection_quantize(rest, &trisection);
    for (code, &s) in region_codes.iter_mut().zip(&salient_support) {
        if s {
            *code = RegionCode::Salient;
        }
    }
    on_stage(Stage::Trisection);

    Ok(BlockQuantResult {
        col_range: (col_start, col_start + width),
        rows,
        nm_mask,
        salient_cols,
        salient: SalientAtoms { original, residual },
        non_salient: RegionAtoms { sparse, intermediate, dense },
        trisection,
        region_codes,
    })
}
