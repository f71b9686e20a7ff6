use serde::{Deserialize, Serialize};

use crate::quantizer::{reconstruct, RegionCode, StructuredBinaryLayer};
use crate::tensor::{frobenius_distance, output_error, Tensor2D};

/// Squared reconstruction error split by entry role.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionBreakdown {
    pub salient: f64,
    pub sparse: f64,
    pub intermediate: f64,
    pub dense: f64,
    pub pruned: f64,
}

impl RegionBreakdown {
    pub fn total(&self) -> f64 {
        self.salient + self.sparse + self.intermediate + self.dense + self.pruned
    }

    fn slot(&mut self, code: RegionCode) -> &mut f64 {
        match code {
            RegionCode::Salient => &mut self.salient,
            RegionCode::Sparse => &mut self.sparse,
            RegionCode::Intermediate => &mut self.intermediate,
            RegionCode::Dense => &mut self.dense,
            RegionCode::Pruned => &mut self.pruned,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerEvaluation {
    pub frobenius_error: f64,
    pub output_error: f64,
    pub breakdown: RegionBreakdown,
}

/// Errors of `layer` against the original weights, with calibration `x`.
pub fn evaluate_layer(w_orig: &Tensor2D, layer: &StructuredBinaryLayer, x: &Tensor2D) -> LayerEvaluation {
    assert_eq!(w_orig.shape(), (layer.rows, layer.cols), "weight shape differs from the quantized layer");
    let recon = reconstruct(layer);
    let mut breakdown = RegionBreakdown::default();
    for (k, code) in layer.region_map().into_iter().enumerate() {
        let d = f64::from(w_orig.data()[k]) - f64::from(recon.data()[k]);
        *breakdown.slot(code) += d * d;
    }
    LayerEvaluation {
        frobenius_error: frobenius_distance(w_orig, &recon),
        output_error: output_error(w_orig, &recon, x),
        breakdown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::NMRatio;
    use crate::pipeline::{quantize_layer, QuantConfig};
    use crate::tensorio::synth_layer;

    #[test]
    fn breakdown_adds_up() {
        for seed in 0..8 {
            let rec = synth_layer(8, 32, 20, seed, 0.3);
            let config = QuantConfig { block_size: 8, ..QuantConfig::default() };
            let q = quantize_layer(&rec, NMRatio::new(1 + seed as usize % 8, 8).unwrap(), &config).unwrap();
            let eval = evaluate_layer(&rec.weight, &q.layer, &rec.calibration);
            let total = eval.frobenius_error.powi(2);
            assert!((eval.breakdown.total() - total).abs() <= 1e-6 * total.max(1e-12));

            let pruned: f64 = q
                .layer
                .region_map()
                .iter()
                .zip(rec.weight.data())
                .filter(|(c, _)| **c == RegionCode::Pruned)
                .map(|(_, &w)| f64::from(w).powi(2))
                .sum();
            assert_eq!(eval.breakdown.pruned, pruned);
        }
    }

    #[test]
    fn exact_reconstruction_has_no_error() {
        let rec = synth_layer(4, 8, 6, 2, 0.1);
        let config = QuantConfig { block_size: 8, ..QuantConfig::default() };
        let q = quantize_layer(&rec, NMRatio::new(2, 4).unwrap(), &config).unwrap();
        let recon = reconstruct(&q.layer);
        let eval = evaluate_layer(&recon, &q.layer, &rec.calibration);
        assert_eq!(eval.frobenius_error, 0.0);
        assert_eq!(eval.output_error, 0.0);
        assert_eq!(eval.breakdown.total(), 0.0);
    }
}
