use serde::{Deserialize, Serialize};

use crate::allocation::AllocationPlan;
use crate::packing::{bit_report, BitReport};
use crate::quantizer::{RegionCode, Stage, StructuredBinaryLayer};
use crate::tensorio::LayerRecord;

use super::eval::{evaluate_layer, RegionBreakdown};
use super::files::packed_file_name;
use super::{QuantConfig, QuantizedLayer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub salient: usize,
    pub sparse: usize,
    pub intermediate: usize,
    pub dense: usize,
    pub pruned: usize,
}

impl RegionCounts {
    fn of(layer: &StructuredBinaryLayer) -> Self {
        Self {
            salient: layer.count(RegionCode::Salient),
            sparse: layer.count(RegionCode::Sparse),
            intermediate: layer.count(RegionCode::Intermediate),
            dense: layer.count(RegionCode::Dense),
            pruned: layer.count(RegionCode::Pruned),
        }
    }
}

/// Break-points over the blocks that had non-salient weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrisectionSummary {
    pub blocks: usize,
    pub p1_min: f64,
    pub p1_mean: f64,
    pub p1_max: f64,
    pub p2_mean: f64,
}

impl TrisectionSummary {
    fn of(layer: &StructuredBinaryLayer) -> Self {
        let params: Vec<_> = layer.blocks.iter().map(|b| b.trisection).filter(|p| p.p1 > 0.0).collect();
        if params.is_empty() {
            return Self { blocks: 0, p1_min: 0.0, p1_mean: 0.0, p1_max: 0.0, p2_mean: 0.0 };
        }
        let p1: Vec<f64> = params.iter().map(|p| f64::from(p.p1)).collect();
        let count = p1.len() as f64;
        Self {
            blocks: params.len(),
            p1_min: p1.iter().copied().fold(f64::INFINITY, f64::min),
            p1_mean: p1.iter().sum::<f64>() / count,
            p1_max: p1.iter().copied().fold(0.0, f64::max),
            p2_mean: params.iter().map(|p| f64::from(p.p2)).sum::<f64>() / count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub nm: String,
    pub packed_file: String,
    pub packed_bytes: usize,
    pub bits: BitReport,
    pub frobenius_error: f64,
    pub output_error: f64,
    pub relative_frobenius_error: f64,
    /// Share of columns chosen as salient.
    pub salient_column_fraction: f64,
    pub region_counts: RegionCounts,
    pub region_squared_error: RegionBreakdown,
    pub trisection: TrisectionSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_used: Option<f64>,
}

impl LayerReport {
    pub fn build(record: &LayerRecord, quantized: &QuantizedLayer, packed_bytes: usize) -> Self {
        let mut report = Self::from_layer(record, &quantized.layer, packed_bytes);
        report.lambda_used = Some(quantized.lambda_used);
        report
    }

    /// Report for a layer evaluated against its original weights.
    pub fn from_layer(record: &LayerRecord, layer: &StructuredBinaryLayer, packed_bytes: usize) -> Self {
        let eval = evaluate_layer(&record.weight, layer, &record.calibration);
        let norm = record.weight.frobenius_norm();
        let salient_cols: usize = layer.blocks.iter().map(|b| b.salient_cols.len()).sum();
        Self {
            name: layer.name.clone(),
            nm: layer.nm.to_string(),
            packed_file: packed_file_name(&layer.name),
            packed_bytes,
            bits: bit_report(layer, packed_bytes),
            frobenius_error: eval.frobenius_error,
            output_error: eval.output_error,
            relative_frobenius_error: if norm > 0.0 { eval.frobenius_error / norm } else { 0.0 },
            salient_column_fraction: salient_cols as f64 / layer.cols as f64,
            region_counts: RegionCounts::of(layer),
            region_squared_error: eval.breakdown,
            trisection: TrisectionSummary::of(layer),
            lambda_used: None,
        }
    }
}

/// Wall-clock span of one stage of one block, seconds since the layer began.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpan {
    pub block: usize,
    pub stage: Stage,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTimings {
    pub layer: String,
    pub total_s: f64,
    pub stages: Vec<StageSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTotals {
    pub params: u64,
    pub realized_ratio: f64,
    pub avg_bits_paper: f64,
    pub avg_bits_packed: f64,
    pub output_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantReport {
    pub config: QuantConfig,
    pub plan: AllocationPlan,
    pub layers: Vec<LayerReport>,
    pub totals: ModelTotals,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<Vec<LayerTimings>>,
}

impl QuantReport {
    pub fn new(
        config: QuantConfig,
        plan: AllocationPlan,
        layers: Vec<LayerReport>,
        timings: Option<Vec<LayerTimings>>,
    ) -> Self {
        let elements: Vec<f64> = layers
            .iter()
            .map(|l| {
                (l.region_counts.salient
                    + l.region_counts.sparse
                    + l.region_counts.intermediate
                    + l.region_counts.dense
                    + l.region_counts.pruned) as f64
            })
            .collect();
        let total: f64 = elements.iter().sum();
        let weighted = |f: fn(&LayerReport) -> f64| -> f64 {
            layers.iter().zip(&elements).map(|(l, e)| f(l) * e).sum::<f64>() / total
        };
        let totals = ModelTotals {
            params: total as u64,
            realized_ratio: plan.realized_ratio,
            avg_bits_paper: weighted(|l| l.bits.avg_bits_paper),
            avg_bits_packed: weighted(|l| l.bits.avg_bits_packed),
            output_error: layers.iter().map(|l| l.output_error * l.output_error).sum::<f64>().sqrt(),
        };
        Self { config, plan, layers, totals, timings }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
