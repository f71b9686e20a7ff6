//! Browser bindings for three interactive views: the magnitude trisection of
//! one masked block, a per-layer N:M allocation plan, and the sign-flip error
//! curve of a quantized layer.
//!
//! Every view takes a JSON request and returns a JSON response. The pure
//! functions are usable natively; the `*_json` wrappers are the wasm exports.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use structbin::allocation::{AllocationPlan, AllocationStrategy, NMRatio};
use structbin::pipeline::{flip_experiment, plan_allocation, quantize_layer, FlipPoint, QuantConfig};
use structbin::quantizer::{apply_nm_mask, binarize_rowwise, trisection_curve, trisection_search, Masked, RegionCode};
use structbin::rng::SplitMix64;
use structbin::scoring::ScoreMatrix;
use structbin::tensor::{output_error, Tensor2D};
use structbin::tensorio::{synth_layer, synth_model, LayerRecord};

const HISTOGRAM_BINS: usize = 40;
const MAX_ENTRIES: usize = 1 << 18;

fn parse_nm(nm: &str) -> Result<NMRatio, String> {
    nm.parse()
}

fn check_size(rows: usize, cols: usize) -> Result<(), String> {
    if rows == 0 || cols == 0 || rows * cols > MAX_ENTRIES {
        return Err(format!("{rows}x{cols} must be non-empty and at most {MAX_ENTRIES} entries"));
    }
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct TrisectionRequest {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub nm: String,
    pub sigma: f64,
    pub grid_points: usize,
}

impl Default for TrisectionRequest {
    fn default() -> Self {
        Self { rows: 32, cols: 64, seed: 0, nm: "4:8".into(), sigma: 2.0, grid_points: 160 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub p1: f32,
    pub p2: f32,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrisectionView {
    pub max_abs: f64,
    pub p1: f32,
    pub p2: f32,
    pub curve: Vec<CurvePoint>,
    /// Upper edge of each histogram bin over `[0, max_abs]`.
    pub bin_edges: Vec<f64>,
    /// Kept-entry counts per bin, split as `[sparse, intermediate, dense]`.
    pub bins: Vec<[usize; 3]>,
    pub sparse: usize,
    pub intermediate: usize,
    pub dense: usize,
    pub pruned: usize,
    /// Squared error of one row-wise scale over all kept entries.
    pub single_scale_error: f64,
    pub trisection_error: f64,
}

/// Magnitude trisection of a synthetic block after magnitude N:M pruning.
pub fn trisection_view(req: &TrisectionRequest) -> Result<TrisectionView, String> {
    check_size(req.rows, req.cols)?;
    let nm = parse_nm(&req.nm)?;
    let weight = synth_layer(req.rows, req.cols, 1, req.seed, 0.0).weight;
    let w: Vec<f64> = weight.data().iter().map(|&v| f64::from(v)).collect();
    let scores = ScoreMatrix::new(req.rows, req.cols, w.iter().map(|v| v.abs()).collect());
    let support = apply_nm_mask(&scores, nm.n, nm.m, 0);
    let masked = Masked::new(req.rows, req.cols, &w, &support);

    let params = trisection_search(masked, req.sigma, req.grid_points).map_err(|e| e.to_string())?;
    let curve: Vec<CurvePoint> = trisection_curve(masked, req.sigma, req.grid_points)
        .into_iter()
        .map(|(p, error)| CurvePoint { p1: p.p1, p2: p.p2, error })
        .collect();
    let trisection_error = curve.iter().find(|c| c.p1 == params.p1 && c.p2 == params.p2).map_or(0.0, |c| c.error);

    let max_abs = masked.max_abs();
    let mut bins = vec![[0usize; 3]; HISTOGRAM_BINS];
    let mut counts = [0usize; 4];
    for (&v, &kept) in w.iter().zip(&support) {
        if !kept {
            counts[3] += 1;
            continue;
        }
        let region = match params.classify(v.abs()) {
            RegionCode::Sparse => 0,
            RegionCode::Intermediate => 1,
            _ => 2,
        };
        counts[region] += 1;
        let bin = if max_abs > 0.0 { ((v.abs() / max_abs) * HISTOGRAM_BINS as f64) as usize } else { 0 };
        bins[bin.min(HISTOGRAM_BINS - 1)][region] += 1;
    }
    let bin_edges = (1..=HISTOGRAM_BINS).map(|i| max_abs * i as f64 / HISTOGRAM_BINS as f64).collect();

    let single = binarize_rowwise(masked);
    let single_scale_error = (0..req.rows)
        .flat_map(|r| (0..req.cols).map(move |c| (r, c)))
        .filter(|&(r, c)| support[r * req.cols + c])
        .map(|(r, c)| (w[r * req.cols + c] - single.value(r, c)).powi(2))
        .sum();

    Ok(TrisectionView {
        max_abs,
        p1: params.p1,
        p2: params.p2,
        curve,
        bin_edges,
        bins,
        sparse: counts[0],
        intermediate: counts[1],
        dense: counts[2],
        pruned: counts[3],
        single_scale_error,
        trisection_error,
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct PlanRequest {
    pub layers: usize,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub nm: String,
    pub strategy: String,
    pub renormalize: bool,
    /// Log-scale spread of per-layer weight magnitudes; 0 makes all layers alike.
    pub spread: f64,
}

impl Default for PlanRequest {
    fn default() -> Self {
        Self {
            layers: 12,
            rows: 32,
            cols: 32,
            seed: 0,
            nm: "4:8".into(),
            strategy: "adaptive".into(),
            renormalize: true,
            spread: 0.5,
        }
    }
}

/// Synthetic layers whose magnitudes vary by `exp(spread · z)` per layer.
fn spread_model(req: &PlanRequest) -> Result<Vec<LayerRecord>, String> {
    if req.layers == 0 || req.layers > 256 {
        return Err(format!("layer count {} must be in 1..=256", req.layers));
    }
    check_size(req.rows * req.layers, req.cols)?;
    let mut rng = SplitMix64::new(SplitMix64::derive(req.seed, 0x5ca1e));
    synth_model(req.layers, req.rows, req.cols, 1, req.seed, 0.0)
        .into_iter()
        .map(|rec| {
            let weight = rec.weight.scaled((req.spread * rng.next_normal()).exp() as f32).map_err(|e| e.to_string())?;
            LayerRecord::new(rec.name, weight, rec.calibration).map_err(|e| e.to_string())
        })
        .collect()
}

pub fn plan_view(req: &PlanRequest) -> Result<AllocationPlan, String> {
    let strategy: AllocationStrategy = req.strategy.parse()?;
    let config =
        QuantConfig { nm: parse_nm(&req.nm)?, strategy, renormalize: req.renormalize, ..QuantConfig::default() };
    plan_allocation(&spread_model(req)?, &config).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct FlipRequest {
    pub rows: usize,
    pub cols: usize,
    pub calibration_rows: usize,
    pub seed: u64,
    pub nm: String,
    pub block_size: usize,
    pub fractions: Vec<f64>,
    pub trials: usize,
}

impl Default for FlipRequest {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 64,
            calibration_rows: 64,
            seed: 0,
            nm: "4:8".into(),
            block_size: 32,
            fractions: vec![0.0, 0.025, 0.05, 0.1, 0.15, 0.2, 0.3],
            trials: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlipView {
    /// Output error of the original weights against an all-zero layer.
    pub reference_norm: f64,
    pub points: Vec<FlipPoint>,
}

pub fn flip_view(req: &FlipRequest) -> Result<FlipView, String> {
    check_size(req.rows, req.cols)?;
    check_size(req.calibration_rows, req.cols)?;
    if req.trials == 0 || req.trials > 200 || req.fractions.len() > 64 {
        return Err("use 1..=200 trials and at most 64 fractions".into());
    }
    let nm = parse_nm(&req.nm)?;
    let rec = synth_layer(req.rows, req.cols, req.calibration_rows, req.seed, 0.5);
    let config =
        QuantConfig { nm, block_size: req.block_size, strategy: AllocationStrategy::Uniform, ..QuantConfig::default() };
    let layer = quantize_layer(&rec, nm, &config).map_err(|e| e.to_string())?.layer;
    let points = flip_experiment(&layer, &rec.weight, &rec.calibration, &req.fractions, req.trials, req.seed)
        .map_err(|e| e.to_string())?;
    let zeros = Tensor2D::zeros(req.rows, req.cols);
    Ok(FlipView { reference_norm: output_error(&rec.weight, &zeros, &rec.calibration), points })
}

fn run<Req, Resp>(request: &str, view: impl Fn(&Req) -> Result<Resp, String>) -> Result<String, String>
where
    Req: for<'de> Deserialize<'de>,
    Resp: Serialize,
{
    let req: Req = serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))?;
    let resp = view(&req)?;
    serde_json::to_string(&resp).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn trisection_view_json(request: &str) -> Result<String, JsError> {
    run(request, trisection_view).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn plan_view_json(request: &str) -> Result<String, JsError> {
    run(request, plan_view).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn flip_view_json(request: &str) -> Result<String, JsError> {
    run(request, flip_view).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trisection_counts_cover_the_block() {
        let req = TrisectionRequest { rows: 8, cols: 16, ..Default::default() };
        let view = trisection_view(&req).unwrap();
        assert_eq!(view.sparse + view.intermediate + view.dense + view.pruned, 128);
        assert_eq!(view.pruned, 64);
        let binned: usize = view.bins.iter().flatten().sum();
        assert_eq!(binned, 64);
        assert!(view.p1 < view.p2);
        assert!(view.trisection_error <= view.single_scale_error);
        assert!(view.curve.iter().all(|c| c.error >= view.trisection_error));
    }

    #[test]
    fn plan_meets_the_budget() {
        let plan = plan_view(&PlanRequest::default()).unwrap();
        assert_eq!(plan.layers.len(), 12);
        assert!((plan.realized_ratio - 0.5).abs() <= 1.0 / 8.0 + 1e-12);
        assert!(plan.layers.iter().all(|l| (1..=8).contains(&l.n)));
    }

    #[test]
    fn uniform_plan_ignores_spread() {
        let req = PlanRequest { strategy: "uniform".into(), spread: 2.0, ..Default::default() };
        assert!(plan_view(&req).unwrap().layers.iter().all(|l| l.n == 4));
    }

    #[test]
    fn flip_curve_rises() {
        let req = FlipRequest { fractions: vec![0.0, 0.1, 0.3], trials: 5, ..Default::default() };
        let view = flip_view(&req).unwrap();
        assert!(view.points.windows(2).all(|w| w[0].mean_err < w[1].mean_err));
        assert!(view.reference_norm > view.points[0].mean_err);
    }

    #[test]
    fn requests_fill_defaults_and_reject_garbage() {
        let json = run("{\"rows\": 4, \"cols\": 8}", trisection_view).unwrap();
        assert!(json.contains("\"curve\""));
        assert!(run::<TrisectionRequest, _>("{\"nm\": \"9:8\"}", trisection_view).is_err());
        assert!(run::<PlanRequest, _>("not json", plan_view).is_err());
        assert!(run::<FlipRequest, _>("{\"rows\": 0}", flip_view).is_err());
    }
}
