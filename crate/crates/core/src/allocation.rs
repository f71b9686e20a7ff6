//! Per-layer N:M ratios.
//!
//! The adaptive strategy keeps a larger share of weights in layers with a
//! larger Frobenius-norm share `α_i`:
//!
//! ```text
//! raw_i = α_i + (1 − α_i) · target
//! n_i   = clamp(round(raw_i · m), 1, m)
//! ```
//!
//! Because `raw_i ≥ target` for every layer, the rounded plan overshoots the
//! budget. With `renormalize` set, a greedy pass then moves single `n_i` steps
//! until the parameter-weighted kept ratio is within `1/m` of the target. The
//! plan records both the raw ratios and the final `n_i`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor2D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("every layer is all-zero; importances are undefined")]
    AllZeroModel,
    #[error("no layers to allocate")]
    NoLayers,
    #[error("target ratio {target} cannot be met with n in [1, {m}]")]
    InfeasibleBudget { target: f64, m: usize },
    #[error("target ratio {0} must lie in (0, 1]")]
    InvalidTarget(f64),
    #[error("invalid N:M ratio {n}:{m}")]
    InvalidRatio { n: usize, m: usize },
    #[error("importances must be non-negative and sum to 1 (sum = {0})")]
    BadImportances(f64),
    #[error("{importances} importances but {params} parameter counts")]
    LengthMismatch { importances: usize, params: usize },
}

/// Largest bank width the packed format can describe.
pub const MAX_BANK: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NMRatio {
    pub n: usize,
    pub m: usize,
}

impl NMRatio {
    pub fn new(n: usize, m: usize) -> Result<Self, AllocationError> {
        if n == 0 || n > m || m > MAX_BANK {
            return Err(AllocationError::InvalidRatio { n, m });
        }
        Ok(Self { n, m })
    }

    pub fn ratio(&self) -> f64 {
        self.n as f64 / self.m as f64
    }
}

impl std::fmt::Display for NMRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

impl std::str::FromStr for NMRatio {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (n, m) = s.split_once(':').ok_or_else(|| format!("expected N:M, got '{s}'"))?;
        let n: usize = n.trim().parse().map_err(|_| format!("bad N in '{s}'"))?;
        let m: usize = m.trim().parse().map_err(|_| format!("bad M in '{s}'"))?;
        NMRatio::new(n, m).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationStrategy {
    Adaptive,
    Uniform,
    #[serde(rename = "sinshape")]
    SinShape,
}

impl std::str::FromStr for AllocationStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "uniform" => Ok(Self::Uniform),
            "sinshape" => Ok(Self::SinShape),
            other => Err(format!("unknown strategy '{other}' (adaptive|uniform|sinshape)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAllocation {
    pub name: String,
    /// Frobenius-norm share; `None` for positional strategies.
    pub alpha: Option<f64>,
    pub raw_ratio: f64,
    pub n: usize,
    #[serde(skip, default = "unit_params")]
    pub params: u64,
}

fn unit_params() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub strategy: AllocationStrategy,
    pub target_ratio: f64,
    pub m: usize,
    pub layers: Vec<LayerAllocation>,
    pub realized_ratio: f64,
}

impl AllocationPlan {
    pub fn ratio_for(&self, index: usize) -> NMRatio {
        NMRatio { n: self.layers[index].n, m: self.m }
    }

    /// Replaces the default `layer_{i}` names and parameter counts.
    pub fn with_layers(mut self, names: &[String], params: &[u64]) -> Self {
        assert_eq!(names.len(), self.layers.len());
        assert_eq!(params.len(), self.layers.len());
        for ((layer, name), &p) in self.layers.iter_mut().zip(names).zip(params) {
            layer.name = name.clone();
            layer.params = p;
        }
        self.realized_ratio = realized(&self.layers, self.m);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

fn realized(layers: &[LayerAllocation], m: usize) -> f64 {
    let total: f64 = layers.iter().map(|l| l.params as f64).sum();
    layers.iter().map(|l| l.params as f64 * l.n as f64).sum::<f64>() / (m as f64 * total)
}

fn round_ratio(raw: f64, m: usize) -> usize {
    // f64::round rounds half away from zero
    ((raw * m as f64).round() as i64).clamp(1, m as i64) as usize
}

fn check_target(target: f64) -> Result<(), AllocationError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(AllocationError::InvalidTarget(target));
    }
    Ok(())
}

fn check_m(m: usize) -> Result<(), AllocationError> {
    if m == 0 || m > MAX_BANK {
        return Err(AllocationError::InvalidRatio { n: 0, m });
    }
    Ok(())
}

/// Frobenius-norm share of each layer.
pub fn layer_importance(layers: &[&Tensor2D]) -> Result<Vec<f64>, AllocationError> {
    if layers.is_empty() {
        return Err(AllocationError::NoLayers);
    }
    let norms: Vec<f64> = layers.iter().map(|w| w.frobenius_norm()).collect();
    let total: f64 = norms.iter().sum();
    if total == 0.0 {
        return Err(AllocationError::AllZeroModel);
    }
    Ok(norms.into_iter().map(|w| w / total).collect())
}

/// Adaptive plan with every layer weighted equally in the realized ratio.
pub fn assign_nm(
    importances: &[f64],
    target_ratio: f64,
    m: usize,
    renormalize: bool,
) -> Result<AllocationPlan, AllocationError> {
    assign_nm_weighted(importances, &vec![1; importances.len()], target_ratio, m, renormalize)
}

/// Adaptive plan; `params[i]` is layer `i`'s element count.
pub fn assign_nm_weighted(
    importances: &[f64],
    params: &[u64],
    target_ratio: f64,
    m: usize,
    renormalize: bool,
) -> Result<AllocationPlan, AllocationError> {
    if importances.is_empty() {
        return Err(AllocationError::NoLayers);
    }
    if importances.len() != params.len() {
        return Err(AllocationError::LengthMismatch { importances: importances.len(), params: params.len() });
    }
    check_target(target_ratio)?;
    check_m(m)?;
    let sum: f64 = importances.iter().sum();
    if importances.iter().any(|a| a.is_nan() || *a < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(AllocationError::BadImportances(sum));
    }

    let mut layers: Vec<LayerAllocation> = importances
        .iter()
        .zip(params)
        .enumerate()
        .map(|(i, (&alpha, &p))| {
            let raw = alpha + (1.0 - alpha) * target_ratio;
            LayerAllocation {
                name: format!("layer_{i}"),
                alpha: Some(alpha),
                raw_ratio: raw,
                n: round_ratio(raw, m),
                params: p,
            }
        })
        .collect();

    if renormalize {
        repair_budget(&mut layers, target_ratio, m)?;
    }
    let realized_ratio = realized(&layers, m);
    Ok(AllocationPlan { strategy: AllocationStrategy::Adaptive, target_ratio, m, layers, realized_ratio })
}

/// Greedy single steps on `n_i` until the realized ratio is within `1/m` of
/// the target. Each step moves the realized ratio by at most `1/m`, so the
/// loop cannot jump over the `2/m`-wide acceptance band.
fn repair_budget(layers: &mut [LayerAllocation], target: f64, m: usize) -> Result<(), AllocationError> {
    let tol = 1.0 / m as f64 + 1e-12;
    let mf = m as f64;
    loop {
        let r = realized(layers, m);
        if (r - target).abs() <= tol {
            return Ok(());
        }
        let excess = |l: &LayerAllocation| l.n as f64 / mf - l.raw_ratio;
        let pick = if r > target {
            // lower the most over-rounded layer that can still shrink
            layers
                .iter()
                .enumerate()
                .filter(|(_, l)| l.n > 1)
                .fold(None::<(usize, f64)>, |best, (i, l)| match best {
                    Some((_, e)) if e >= excess(l) => best,
                    _ => Some((i, excess(l))),
                })
                .map(|(i, _)| (i, -1i64))
        } else {
            layers
                .iter()
                .enumerate()
                .filter(|(_, l)| l.n < m)
                .fold(None::<(usize, f64)>, |best, (i, l)| match best {
                    Some((_, e)) if e <= excess(l) => best,
                    _ => Some((i, excess(l))),
                })
                .map(|(i, _)| (i, 1i64))
        };
        match pick {
            Some((i, step)) => layers[i].n = (layers[i].n as i64 + step) as usize,
            None => return Err(AllocationError::InfeasibleBudget { target, m }),
        }
    }
}

pub fn uniform_plan(layer_count: usize, target_ratio: f64, m: usize) -> Result<AllocationPlan, AllocationError> {
    if layer_count == 0 {
        return Err(AllocationError::NoLayers);
    }
    check_target(target_ratio)?;
    check_m(m)?;
    let n = (target_ratio * m as f64).round() as usize;
    if n < 1 || n > m {
        return Err(AllocationError::InvalidRatio { n, m });
    }
    let layers: Vec<LayerAllocation> = (0..layer_count)
        .map(|i| LayerAllocation { name: format!("layer_{i}"), alpha: None, raw_ratio: target_ratio, n, params: 1 })
        .collect();
    Ok(AllocationPlan {
        strategy: AllocationStrategy::Uniform,
        target_ratio,
        m,
        layers,
        realized_ratio: n as f64 / m as f64,
    })
}

/// Keep ratio follows a half sine period from `target + A` at the first layer
/// down to `target − A` at the last, `A = min(target, 1 − target) / 2`.
pub fn sin_shape_plan(layer_count: usize, target_ratio: f64, m: usize) -> Result<AllocationPlan, AllocationError> {
    if layer_count == 0 {
        return Err(AllocationError::NoLayers);
    }
    check_target(target_ratio)?;
    check_m(m)?;
    let amplitude = target_ratio.min(1.0 - target_ratio) / 2.0;
    let layers: Vec<LayerAllocation> = (0..layer_count)
        .map(|i| {
            let raw = if layer_count == 1 {
                target_ratio
            } else {
                let phase = i as f64 / (layer_count - 1) as f64 - 0.5;
                target_ratio - amplitude * (std::f64::consts::PI * phase).sin()
            };
            LayerAllocation {
                name: format!("layer_{i}"),
                alpha: None,
                raw_ratio: raw,
                n: round_ratio(raw, m),
                params: 1,
            }
        })
        .collect();
    let realized_ratio = realized(&layers, m);
    Ok(AllocationPlan { strategy: AllocationStrategy::SinShape, target_ratio, m, layers, realized_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn importance_examples() {
        let a = Tensor2D::from_rows(&[vec![3.0, 0.0]]).unwrap();
        let b = Tensor2D::from_rows(&[vec![0.0, -1.0]]).unwrap();
        assert_eq!(layer_importance(&[&a]).unwrap(), vec![1.0]);
        assert_eq!(layer_importance(&[&a, &a]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(layer_importance(&[&a, &b]).unwrap(), vec![0.75, 0.25]);
        let z = Tensor2D::zeros(2, 2);
        assert_eq!(layer_importance(&[&z, &z]), Err(AllocationError::AllZeroModel));
    }

    #[test]
    fn single_layer_keeps_everything() {
        for target in [0.25, 0.5, 0.9] {
            let plan = assign_nm(&[1.0], target, 8, false).unwrap();
            assert_eq!(plan.layers[0].raw_ratio, 1.0);
            assert_eq!(plan.layers[0].n, 8);
        }
    }

    #[test]
    fn raw_formula_overshoots_and_repair_fixes_it() {
        let raw = assign_nm(&[0.5, 0.5], 0.5, 8, false).unwrap();
        assert_eq!(raw.layers.iter().map(|l| l.raw_ratio).collect::<Vec<_>>(), vec![0.75, 0.75]);
        assert_eq!(raw.layers.iter().map(|l| l.n).collect::<Vec<_>>(), vec![6, 6]);
        assert_eq!(raw.realized_ratio, 0.75);

        let fixed = assign_nm(&[0.5, 0.5], 0.5, 8, true).unwrap();
        assert!((fixed.realized_ratio - 0.5).abs() <= 1.0 / 8.0 + 1e-12);
        // raw values survive the repair
        assert_eq!(fixed.layers[0].raw_ratio, 0.75);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(assign_nm(&[0.3, 0.3], 0.5, 8, true), Err(AllocationError::BadImportances(_))));
        assert!(matches!(assign_nm(&[1.0], 0.0, 8, true), Err(AllocationError::InvalidTarget(_))));
        assert!(matches!(assign_nm(&[1.0], 1.5, 8, true), Err(AllocationError::InvalidTarget(_))));
        assert!(matches!(uniform_plan(2, 0.01, 8), Err(AllocationError::InvalidRatio { .. })));
    }

    #[test]
    fn uniform_examples() {
        let p = uniform_plan(3, 0.5, 8).unwrap();
        assert!(p.layers.iter().all(|l| l.n == 4));
        assert_eq!(p.realized_ratio, 0.5);
        let p = uniform_plan(1, 0.75, 8).unwrap();
        assert_eq!(p.layers[0].n, 6);
        assert_eq!(p.realized_ratio, 6.0 / 8.0);
    }

    #[test]
    fn sin_shape_examples() {
        let one = sin_shape_plan(1, 0.5, 8).unwrap();
        let uni = uniform_plan(1, 0.5, 8).unwrap();
        assert_eq!(one.layers[0].n, uni.layers[0].n);
        assert_eq!(one.layers[0].raw_ratio, uni.layers[0].raw_ratio);

        let nine = sin_shape_plan(9, 0.5, 8).unwrap();
        assert!((nine.layers[4].raw_ratio - 0.5).abs() < 1e-15);
        assert!((nine.layers[0].raw_ratio - 0.75).abs() < 1e-12);
        for w in nine.layers.windows(2) {
            assert!(w[0].raw_ratio >= w[1].raw_ratio);
        }
        let mean: f64 = nine.layers.iter().map(|l| l.raw_ratio).sum::<f64>() / 9.0;
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn plan_json_shape() {
        let plan = assign_nm(&[0.6, 0.4], 0.5, 8, true).unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json()).unwrap();
        assert_eq!(v["strategy"], "adaptive");
        assert_eq!(v["m"], 8);
        assert!(v["layers"][0].get("alpha").is_some());
        assert!(v["layers"][0].get("raw_ratio").is_some());
        assert!(v["layers"][0].get("params").is_none());
        let back: AllocationPlan = serde_json::from_value(v).unwrap();
        assert_eq!(back.layers[1].n, plan.layers[1].n);
    }

    #[test]
    fn nm_parse() {
        assert_eq!("4:8".parse::<NMRatio>().unwrap(), NMRatio { n: 4, m: 8 });
        assert!("9:8".parse::<NMRatio>().is_err());
        assert!("0:8".parse::<NMRatio>().is_err());
        assert!("4-8".parse::<NMRatio>().is_err());
    }

    fn random_importances(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        let raw: Vec<f64> = (0..len).map(|_| rng.next_f64() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn raw_ratio_increases_with_importance(len in 2usize..10, seed in 0u64..5000, target in 0.05f64..0.95) {
            let imp = random_importances(len, seed);
            let plan = assign_nm(&imp, target, 8, false).unwrap();
            for i in 0..len {
                for j in 0..len {
                    if imp[i] < imp[j] {
                        prop_assert!(plan.layers[i].raw_ratio < plan.layers[j].raw_ratio);
                    }
                }
            }
        }

        #[test]
        fn renormalized_plans_meet_budget(len in 1usize..33, seed in 0u64..5000, target in 0.05f64..1.0, m in prop::sample::select(vec![4usize, 8, 16])) {
            let plan = assign_nm(&random_importances(len, seed), target, m, true).unwrap();
            prop_assert!((plan.realized_ratio - target).abs() <= 1.0 / m as f64 + 1e-12);
            prop_assert!(plan.layers.iter().all(|l| l.n >= 1 && l.n <= m));
        }

        #[test]
        fn adaptive_is_permutation_equivariant(len in 2usize..8, seed in 0u64..5000, rot in 1usize..7) {
            let imp = random_importances(len, seed);
            let rotated: Vec<f64> = (0..len).map(|i| imp[(i + rot) % len]).collect();
            let a = assign_nm(&imp, 0.5, 8, false).unwrap();
            let b = assign_nm(&rotated, 0.5, 8, false).unwrap();
            for i in 0..len {
                prop_assert_eq!(b.layers[i].n, a.layers[(i + rot) % len].n);
            }
        }
    }
}
