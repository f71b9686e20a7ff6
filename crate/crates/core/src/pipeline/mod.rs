//! End-to-end quantization of a model, evaluation and the sign-flip probe.

mod eval;
mod files;
mod flip;
mod report;

pub use eval::{evaluate_layer, LayerEvaluation, RegionBreakdown};
pub use files::{load_packed, packed_file_name, quantize_manifest, report_packed, write_report};
pub use flip::{
    flip_experiment, flip_model_experiment, flip_positions, non_salient_positions, FlipPoint, FlipPosition,
};
pub use report::{LayerReport, LayerTimings, QuantReport, StageSpan, TrisectionSummary};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{
    assign_nm_weighted, layer_importance, sin_shape_plan, uniform_plan, AllocationPlan, AllocationStrategy, NMRatio,
};
use crate::compensation::{build_hessian, compensate_block};
use crate::error::{Error, Result};
use crate::packing::encode;
use crate::quantizer::{quantize_block_observed, BlockConfig, Stage, StructuredBinaryLayer};
use crate::scoring::{LayerScorer, ScorerKind};
use crate::tensorio::LayerRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub scorer: ScorerKind,
    pub strategy: AllocationStrategy,
    /// Model-wide target; adaptive and sin-shape plans vary `n` per layer.
    pub nm: NMRatio,
    pub block_size: usize,
    pub lambda_rel: f64,
    pub sigma_ratio: f64,
    pub grid_points: usize,
    pub salient_cap: f64,
    pub renormalize: bool,
    /// Turning this off skips error feedback between blocks.
    pub compensate: bool,
    pub seed: u64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            scorer: ScorerKind::StandardizedImportance,
            strategy: AllocationStrategy::Adaptive,
            nm: NMRatio { n: 4, m: 8 },
            block_size: 128,
            lambda_rel: 0.01,
            sigma_ratio: 2.0,
            grid_points: 160,
            salient_cap: 0.3,
            renormalize: true,
            compensate: true,
            seed: 0,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.nm.m;
        NMRatio::new(self.nm.n, m)?;
        if self.block_size < m || !self.block_size.is_multiple_of(m) || self.block_size > u16::MAX as usize {
            return Err(Error::Config(format!(
                "block size {} must be a multiple of m = {m} and at most {}",
                self.block_size,
                u16::MAX
            )));
        }
        if !(self.lambda_rel > 0.0 && self.lambda_rel.is_finite()) {
            return Err(Error::Config(format!("lambda_rel {} must be positive", self.lambda_rel)));
        }
        if !(self.sigma_ratio > 1.0 && self.sigma_ratio.is_finite()) {
            return Err(Error::Config(format!("sigma {} must exceed 1", self.sigma_ratio)));
        }
        if self.grid_points < 2 {
            return Err(Error::Config(format!("grid needs at least 2 points, got {}", self.grid_points)));
        }
        if !(self.salient_cap > 0.0 && self.salient_cap <= 1.0) {
            return Err(Error::Config(format!("salient cap {} not in (0, 1]", self.salient_cap)));
        }
        Ok(())
    }

    pub fn block_config(&self) -> BlockConfig {
        BlockConfig { salient_cap: self.salient_cap, sigma_ratio: self.sigma_ratio, grid_points: self.grid_points }
    }
}

/// A quantized layer with the damping its Hessian actually needed.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub layer: StructuredBinaryLayer,
    pub lambda_used: f64,
}

/// Per-layer N:M plan for `layers` under `config`.
pub fn plan_allocation(layers: &[LayerRecord], config: &QuantConfig) -> Result<AllocationPlan> {
    let target = config.nm.ratio();
    let m = config.nm.m;
    let plan = match config.strategy {
        AllocationStrategy::Adaptive => {
            let weights: Vec<_> = layers.iter().map(|l| &l.weight).collect();
            let params: Vec<u64> = layers.iter().map(|l| (l.weight.rows() * l.weight.cols()) as u64).collect();
            assign_nm_weighted(&layer_importance(&weights)?, &params, target, m, config.renormalize)?
        }
        AllocationStrategy::Uniform => uniform_plan(layers.len(), target, m)?,
        AllocationStrategy::SinShape => sin_shape_plan(layers.len(), target, m)?,
    };
    let names: Vec<String> = layers.iter().map(|l| l.name.clone()).collect();
    let params: Vec<u64> = layers.iter().map(|l| (l.weight.rows() * l.weight.cols()) as u64).collect();
    Ok(plan.with_layers(&names, &params))
}

/// Quantizes one layer block by block at ratio `nm`.
pub fn quantize_layer(record: &LayerRecord, nm: NMRatio, config: &QuantConfig) -> Result<QuantizedLayer> {
    quantize_layer_observed(record, nm, config, &mut |_, _| {})
}

/// [`quantize_layer`], calling `on_stage(block_index, stage)` after each stage.
pub fn quantize_layer_observed(
    record: &LayerRecord,
    nm: NMRatio,
    config: &QuantConfig,
    on_stage: &mut dyn FnMut(usize, Stage),
) -> Result<QuantizedLayer> {
    config.validate()?;
    let name = &record.name;
    let x = &record.calibration;
    let ctx = build_hessian(x, config.lambda_rel).map_err(|source| Error::Hessian { layer: name.clone(), source })?;
    let scorer = LayerScorer::new(config.scorer, &record.weight, x)
        .map_err(|source| Error::Scoring { layer: name.clone(), source })?;
    let block_config = config.block_config();

    let mut w = record.weight.clone();
    let cols = w.cols();
    let mut blocks = Vec::with_capacity(cols.div_ceil(config.block_size));
    for (index, start) in (0..cols).step_by(config.block_size).enumerate() {
        let end = (start + config.block_size).min(cols);
        let block = w.column_slice(start, end);
        let scores = scorer.score_block(&block, start);
        on_stage(index, Stage::Scoring);
        let result = quantize_block_observed(
            &block,
            &scores,
            nm,
            start,
            &ctx.diagonal(start, end),
            &block_config,
            &mut |stage| on_stage(index, stage),
        )
        .map_err(|source| Error::Quant { layer: name.clone(), block: index, source })?;
        if config.compensate {
            compensate_block(&mut w, &result.reconstruct(), &ctx, start, end);
        }
        on_stage(index, Stage::Compensation);
        blocks.push(result);
    }
    let layer =
        StructuredBinaryLayer { name: name.clone(), rows: w.rows(), cols, block_size: config.block_size, nm, blocks };
    Ok(QuantizedLayer { layer, lambda_used: ctx.lambda_used })
}

/// One quantized, packed and evaluated layer.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub quantized: QuantizedLayer,
    pub packed: Vec<u8>,
    pub report: LayerReport,
    pub timings: LayerTimings,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub plan: AllocationPlan,
    pub layers: Vec<LayerOutput>,
}

impl ModelOutput {
    /// Report with wall-clock timings only when asked, so the default is
    /// reproducible byte for byte.
    pub fn report(&self, config: &QuantConfig, with_timings: bool) -> QuantReport {
        QuantReport::new(
            config.clone(),
            self.plan.clone(),
            self.layers.iter().map(|l| l.report.clone()).collect(),
            with_timings.then(|| self.layers.iter().map(|l| l.timings.clone()).collect()),
        )
    }
}

fn process_layer(record: &LayerRecord, nm: NMRatio, config: &QuantConfig) -> Result<LayerOutput> {
    let clock = Instant::now();
    let mut spans: Vec<StageSpan> = Vec::new();
    let mut last = 0.0;
    let quantized = quantize_layer_observed(record, nm, config, &mut |block, stage| {
        let now = clock.elapsed().as_secs_f64();
        spans.push(StageSpan { block, stage, start_s: last, end_s: now });
        last = now;
    })?;
    let packed = encode(&quantized.layer).map_err(|source| Error::Pack { layer: record.name.clone(), source })?;
    let report = LayerReport::build(record, &quantized, packed.len());
    let timings = LayerTimings { layer: record.name.clone(), total_s: clock.elapsed().as_secs_f64(), stages: spans };
    Ok(LayerOutput { quantized, packed, report, timings })
}

/// Plans, quantizes, packs and evaluates every layer. Layers run in
/// parallel; the output keeps input order.
pub fn quantize_model(layers: &[LayerRecord], config: &QuantConfig) -> Result<ModelOutput> {
    config.validate()?;
    if layers.is_empty() {
        return Err(Error::Config("model has no layers".into()));
    }
    let plan = plan_allocation(layers, config)?;
    let outputs = layers
        .par_iter()
        .enumerate()
        .map(|(i, record)| process_layer(record, plan.ratio_for(i), config))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelOutput { plan, layers: outputs })
}
