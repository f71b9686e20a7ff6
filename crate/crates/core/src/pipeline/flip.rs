use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{reconstruct, RegionCode, StructuredBinaryLayer};
use crate::rng::SplitMix64;
use crate::tensor::{output_error, Tensor2D};

/// A kept non-salient entry: block index and block-local row-major index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlipPosition {
    pub block: usize,
    pub index: usize,
}

/// Every kept non-salient entry, block by block in row-major order.
pub fn non_salient_positions(layer: &StructuredBinaryLayer) -> Vec<FlipPosition> {
    layer
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(block, b)| {
            b.region_codes
                .iter()
                .enumerate()
                .filter(|(_, c)| !matches!(c, RegionCode::Salient | RegionCode::Pruned))
                .map(move |(index, _)| FlipPosition { block, index })
        })
        .collect()
}

/// Negates the stored signs at `positions`.
pub fn flip_positions(layer: &mut StructuredBinaryLayer, positions: &[FlipPosition]) {
    for p in positions {
        let block = &mut layer.blocks[p.block];
        let code = block.region_codes[p.index];
        let atom = match code {
            RegionCode::Sparse => &mut block.non_salient.sparse,
            RegionCode::Intermediate => &mut block.non_salient.intermediate,
            RegionCode::Dense => &mut block.non_salient.dense,
            other => panic!("cannot flip a {other:?} entry"),
        };
        atom.negative[p.index] = !atom.negative[p.index];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipPoint {
    pub fraction: f64,
    pub mean_err: f64,
    /// Sample standard deviation over trials; zero for a single trial.
    pub std_err: f64,
}

fn check_fractions(fractions: &[f64], trials: usize) -> Result<()> {
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Config(format!("flip fraction {f} not in [0, 1]")));
    }
    if trials == 0 {
        return Err(Error::Config("at least one trial is needed".into()));
    }
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Reconstruction of `layer` with the signs at `chosen` negated. Non-salient
/// entries are a single `±α` in `f32`, so negating the reconstructed value is
/// exact.
struct FlipTarget<'a> {
    layer: &'a StructuredBinaryLayer,
    w_orig: &'a Tensor2D,
    x: &'a Tensor2D,
    baseline: Vec<f32>,
    positions: Vec<usize>,
}

impl<'a> FlipTarget<'a> {
    fn new(layer: &'a StructuredBinaryLayer, w_orig: &'a Tensor2D, x: &'a Tensor2D) -> Result<Self> {
        if w_orig.shape() != (layer.rows, layer.cols) || x.cols() != layer.cols {
            return Err(Error::Config(format!(
                "layer '{}' is {}x{}, weights are {}x{}, calibration has {} features",
                layer.name,
                layer.rows,
                layer.cols,
                w_orig.rows(),
                w_orig.cols(),
                x.cols()
            )));
        }
        let positions = non_salient_positions(layer)
            .into_iter()
            .map(|p| {
                let b = &layer.blocks[p.block];
                let width = b.width();
                (p.index / width) * layer.cols + b.col_range.0 + p.index % width
            })
            .collect();
        Ok(Self { layer, w_orig, x, baseline: reconstruct(layer).data().to_vec(), positions })
    }

    fn error_with_flips(&self, fraction: f64, rng: &mut SplitMix64) -> f64 {
        let count = (fraction * self.positions.len() as f64).floor() as usize;
        let mut data = self.baseline.clone();
        for i in rng.sample_without_replacement(self.positions.len(), count) {
            let k = self.positions[i];
            data[k] = -data[k];
        }
        let flipped = Tensor2D::new(self.layer.rows, self.layer.cols, data).expect("finite");
        output_error(self.w_orig, &flipped, self.x)
    }
}

/// Output error after negating a random `fraction` of the non-salient signs,
/// sampled without replacement, averaged over `trials`.
pub fn flip_experiment(
    layer: &StructuredBinaryLayer,
    w_orig: &Tensor2D,
    x: &Tensor2D,
    fractions: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<FlipPoint>> {
    check_fractions(fractions, trials)?;
    let target = FlipTarget::new(layer, w_orig, x)?;
    Ok(fractions
        .iter()
        .enumerate()
        .map(|(fi, &fraction)| {
            let errs: Vec<f64> = (0..trials)
                .map(|t| {
                    let mut rng = SplitMix64::new(SplitMix64::derive(SplitMix64::derive(seed, fi as u64), t as u64));
                    target.error_with_flips(fraction, &mut rng)
                })
                .collect();
            let (mean_err, std_err) = mean_std(&errs);
            FlipPoint { fraction, mean_err, std_err }
        })
        .collect())
}

/// Model-wide variant: every layer flips the same fraction of its own
/// non-salient signs and the trial error is `sqrt(Σ layer_error²)`.
pub fn flip_model_experiment(
    layers: &[(&StructuredBinaryLayer, &Tensor2D, &Tensor2D)],
    fractions: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<FlipPoint>> {
    check_fractions(fractions, trials)?;
    let targets = layers.iter().map(|(l, w, x)| FlipTarget::new(l, w, x)).collect::<Result<Vec<_>>>()?;
    Ok(fractions
        .iter()
        .enumerate()
        .map(|(fi, &fraction)| {
            let errs: Vec<f64> = (0..trials)
                .map(|t| {
                    let trial_seed = SplitMix64::derive(SplitMix64::derive(seed, fi as u64), t as u64);
                    targets
                        .iter()
                        .enumerate()
                        .map(|(li, target)| {
                            let mut rng = SplitMix64::new(SplitMix64::derive(trial_seed, li as u64));
                            target.error_with_flips(fraction, &mut rng).powi(2)
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let (mean_err, std_err) = mean_std(&errs);
            FlipPoint { fraction, mean_err, std_err }
        })
        .collect())
}
