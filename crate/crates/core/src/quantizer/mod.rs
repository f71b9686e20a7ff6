//! Structured binarization of one column block at a time.
//!
//! A block goes through four steps:
//!
//! 1. [`apply_nm_mask`] keeps the `n` best-scoring entries of every bank of
//!    `m` consecutive columns (banks are aligned to the layer's column 0).
//! 2. [`select_salient`] picks the columns with the largest Hessian-scaled
//!    saliency, choosing how many by exhaustive prefix search.
//! 3. Kept salient entries get two sign planes and two per-row scales
//!    ([`residual_binarize`]).
//! 4. Kept non-salient entries are split by magnitude into sparse,
//!    intermediate and dense regions ([`trisection_search`],
//!    [`trisection_quantize`]), each with its own per-row scale.

mod binarize;
mod block;
mod mask;
mod salient;
mod trisection;

pub use binarize::{binarize_rowwise, residual_binarize};
pub use block::{quantize_block, quantize_block_observed, BlockConfig, Stage};
pub use mask::apply_nm_mask;
pub use salient::{column_saliency, select_salient};
pub use trisection::{trisection_curve, trisection_grid, trisection_quantize, trisection_search};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::NMRatio;
use crate::tensor::Tensor2D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("Hessian factor diagonal entry {column} is {value}; must be positive and finite")]
    DegenerateHessian { column: usize, value: f64 },
    #[error("no trisection candidate satisfies p2 <= 0.9 max|w| with sigma {sigma}")]
    NoFeasibleCandidate { sigma: f64 },
    #[error("invalid quantizer parameter: {0}")]
    InvalidParameter(String),
}

/// Per-entry role inside a quantized block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionCode {
    Salient,
    Sparse,
    Intermediate,
    Dense,
    Pruned,
}

/// Borrowed `rows × cols` values with a support mask. Entries outside the
/// support take no part in any computation.
#[derive(Debug, Clone, Copy)]
pub struct Masked<'a> {
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
    pub support: &'a [bool],
}

impl<'a> Masked<'a> {
    pub fn new(rows: usize, cols: usize, values: &'a [f64], support: &'a [bool]) -> Self {
        assert_eq!(values.len(), rows * cols);
        assert_eq!(support.len(), rows * cols);
        Self { rows, cols, values, support }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().zip(self.support).filter(|(_, &s)| s).map(|(v, _)| v.abs()).fold(0.0, f64::max)
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().zip(self.support).filter(|(_, &s)| s).map(|(v, _)| v * v).sum()
    }
}

/// `alpha[row] · sign` on the entries of `support`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryAtom {
    pub rows: usize,
    pub cols: usize,
    pub alpha: Vec<f32>,
    pub support: Vec<bool>,
    /// `true` where the sign is −1; always `false` off the support.
    pub negative: Vec<bool>,
}

impl BinaryAtom {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            alpha: vec![0.0; rows],
            support: vec![false; rows * cols],
            negative: vec![false; rows * cols],
        }
    }

    /// `Some(±1)` on the support.
    #[inline]
    pub fn sign(&self, row: usize, col: usize) -> Option<i8> {
        let k = row * self.cols + col;
        self.support[k].then_some(if self.negative[k] { -1 } else { 1 })
    }

    /// The atom's contribution at `(row, col)`, zero off the support.
    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        match self.sign(row, col) {
            Some(s) => f64::from(self.alpha[row]) * f64::from(s),
            None => 0.0,
        }
    }

    pub fn support_count(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }
}

/// Break-points of the magnitude trisection: sparse `|w| > p2`, intermediate
/// `p1 < |w| ≤ p2`, dense `|w| ≤ p1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrisectionParams {
    pub p1: f32,
    pub p2: f32,
}

impl TrisectionParams {
    /// Break-points of an empty or all-zero region: everything is dense.
    pub const DEGENERATE: Self = Self { p1: 0.0, p2: 0.0 };

    pub fn sigma_ratio(&self) -> Option<f64> {
        (self.p1 > 0.0).then(|| f64::from(self.p2) / f64::from(self.p1))
    }

    #[inline]
    pub fn classify(&self, magnitude: f64) -> RegionCode {
        if magnitude > f64::from(self.p2) {
            RegionCode::Sparse
        } else if magnitude > f64::from(self.p1) {
            RegionCode::Intermediate
        } else {
            RegionCode::Dense
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalientAtoms {
    pub original: BinaryAtom,
    pub residual: BinaryAtom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionAtoms {
    pub sparse: BinaryAtom,
    pub intermediate: BinaryAtom,
    pub dense: BinaryAtom,
}

impl RegionAtoms {
    pub fn get(&self, code: RegionCode) -> Option<&BinaryAtom> {
        match code {
            RegionCode::Sparse => Some(&self.sparse),
            RegionCode::Intermediate => Some(&self.intermediate),
            RegionCode::Dense => Some(&self.dense),
            _ => None,
        }
    }
}

/// Everything produced by quantizing columns `col_range` of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockQuantResult {
    pub col_range: (usize, usize),
    pub rows: usize,
    pub nm_mask: Vec<bool>,
    /// Block-local, ascending.
    pub salient_cols: Vec<usize>,
    pub salient: SalientAtoms,
    pub non_salient: RegionAtoms,
    pub trisection: TrisectionParams,
    pub region_codes: Vec<RegionCode>,
}

impl BlockQuantResult {
    pub fn width(&self) -> usize {
        self.col_range.1 - self.col_range.0
    }

    /// Dense block-local reconstruction, row-major.
    pub fn reconstruct(&self) -> Vec<f32> {
        let width = self.width();
        let mut out = vec![0.0f32; self.rows * width];
        for r in 0..self.rows {
            for c in 0..width {
                let k = r * width + c;
                out[k] = match self.region_codes[k] {
                    RegionCode::Pruned => 0.0,
                    RegionCode::Salient => {
                        (self.salient.original.value(r, c) + self.salient.residual.value(r, c)) as f32
                    }
                    code => self.non_salient.get(code).expect("region code").value(r, c) as f32,
                };
            }
        }
        out
    }

    pub fn count(&self, code: RegionCode) -> usize {
        self.region_codes.iter().filter(|&&c| c == code).count()
    }

    /// Checks the structural invariants against the layer's ratio.
    pub fn validate(&self, nm: NMRatio) -> Result<(), String> {
        let width = self.width();
        let len = self.rows * width;
        if self.nm_mask.len() != len || self.region_codes.len() != len {
            return Err("mask or code length does not match block shape".into());
        }
        if self.salient_cols.windows(2).any(|w| w[0] >= w[1]) || self.salient_cols.iter().any(|&c| c >= width) {
            return Err("salient columns must be ascending and in range".into());
        }
        let mut is_salient = vec![false; width];
        self.salient_cols.iter().for_each(|&c| is_salient[c] = true);
        let atoms = [
            (RegionCode::Salient, &self.salient.original),
            (RegionCode::Salient, &self.salient.residual),
            (RegionCode::Sparse, &self.non_salient.sparse),
            (RegionCode::Intermediate, &self.non_salient.intermediate),
            (RegionCode::Dense, &self.non_salient.dense),
        ];
        for (code, atom) in atoms {
            if atom.rows != self.rows || atom.cols != width || atom.alpha.len() != self.rows {
                return Err(format!("{code:?} atom has the wrong shape"));
            }
            if atom.alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
                return Err(format!("{code:?} atom has a negative or non-finite scale"));
            }
        }
        for r in 0..self.rows {
            for (c, &salient) in is_salient.iter().enumerate() {
                let k = r * width + c;
                let code = self.region_codes[k];
                let expected_kind = match (self.nm_mask[k], salient) {
                    (false, _) => code == RegionCode::Pruned,
                    (true, true) => code == RegionCode::Salient,
                    (true, false) => matches!(code, RegionCode::Sparse | RegionCode::Intermediate | RegionCode::Dense),
                };
                if !expected_kind {
                    return Err(format!("entry ({r}, {c}) has code {code:?} inconsistent with mask/salient set"));
                }
                for (atom_code, atom) in atoms {
                    if atom.support[k] != (code == atom_code) {
                        return Err(format!("{atom_code:?} atom support disagrees with codes at ({r}, {c})"));
                    }
                    if atom.negative[k] && !atom.support[k] {
                        return Err(format!("sign set off support at ({r}, {c})"));
                    }
                }
            }
        }
        let (start, end) = self.col_range;
        for r in 0..self.rows {
            for (bank_start, bank_end) in bank_segments(start, end, nm.m) {
                let kept = (bank_start..bank_end).filter(|&abs| self.nm_mask[r * width + abs - start]).count();
                let want = nm.n.min(bank_end - bank_start);
                if kept != want {
                    return Err(format!("row {r} bank [{bank_start}, {bank_end}) keeps {kept}, expected {want}"));
                }
            }
        }
        Ok(())
    }
}

/// Absolute column ranges of the banks of width `m` (aligned to column 0)
/// that intersect `[start, end)`, clipped to it.
pub fn bank_segments(start: usize, end: usize, m: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut cursor = start;
    std::iter::from_fn(move || {
        if cursor >= end {
            return None;
        }
        let bank_end = ((cursor / m) + 1) * m;
        let seg = (cursor, bank_end.min(end));
        cursor = seg.1;
        Some(seg)
    })
}

/// A fully quantized layer: blocks tile `[0, cols)` in order.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredBinaryLayer {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub nm: NMRatio,
    pub blocks: Vec<BlockQuantResult>,
}

impl StructuredBinaryLayer {
    pub fn validate(&self) -> Result<(), String> {
        let mut cursor = 0;
        for (i, block) in self.blocks.iter().enumerate() {
            if block.col_range.0 != cursor || block.col_range.1 <= cursor {
                return Err(format!("block {i} does not continue the tiling at column {cursor}"));
            }
            if block.rows != self.rows {
                return Err(format!("block {i} has {} rows, layer has {}", block.rows, self.rows));
            }
            block.validate(self.nm).map_err(|e| format!("block {i}: {e}"))?;
            cursor = block.col_range.1;
        }
        if cursor != self.cols {
            return Err(format!("blocks cover {cursor} of {} columns", self.cols));
        }
        Ok(())
    }

    pub fn count(&self, code: RegionCode) -> usize {
        self.blocks.iter().map(|b| b.count(code)).sum()
    }

    pub fn kept_count(&self) -> usize {
        self.blocks.iter().map(|b| b.nm_mask.iter().filter(|&&k| k).count()).sum()
    }

    /// Region code of every entry, layer-wide row-major.
    pub fn region_map(&self) -> Vec<RegionCode> {
        let mut out = vec![RegionCode::Pruned; self.rows * self.cols];
        for block in &self.blocks {
            let (start, _) = block.col_range;
            let width = block.width();
            for r in 0..self.rows {
                out[r * self.cols + start..r * self.cols + start + width]
                    .copy_from_slice(&block.region_codes[r * width..(r + 1) * width]);
            }
        }
        out
    }
}

/// Dense realization of a quantized layer.
pub fn reconstruct(layer: &StructuredBinaryLayer) -> Tensor2D {
    let mut data = vec![0.0f32; layer.rows * layer.cols];
    for block in &layer.blocks {
        let (start, _) = block.col_range;
        let width = block.width();
        let local = block.reconstruct();
        for r in 0..layer.rows {
            data[r * layer.cols + start..r * layer.cols + start + width]
                .copy_from_slice(&local[r * width..(r + 1) * width]);
        }
    }
    Tensor2D::new(layer.rows, layer.cols, data).expect("reconstruction is finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_segments_align_to_absolute_columns() {
        let segs: Vec<_> = bank_segments(6, 20, 8).collect();
        assert_eq!(segs, vec![(6, 8), (8, 16), (16, 20)]);
        let segs: Vec<_> = bank_segments(0, 16, 4).collect();
        assert_eq!(segs.len(), 4);
        assert_eq!(bank_segments(3, 3, 4).count(), 0);
    }

    #[test]
    fn classify_boundaries_are_inclusive_below() {
        let p = TrisectionParams { p1: 0.5, p2: 1.0 };
        assert_eq!(p.classify(0.5), RegionCode::Dense);
        assert_eq!(p.classify(0.50001), RegionCode::Intermediate);
        assert_eq!(p.classify(1.0), RegionCode::Intermediate);
        assert_eq!(p.classify(1.0001), RegionCode::Sparse);
        assert_eq!(p.sigma_ratio(), Some(2.0));
        assert_eq!(TrisectionParams::DEGENERATE.sigma_ratio(), None);
    }
}
