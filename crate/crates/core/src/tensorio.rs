//! On-disk tensors, the model manifest, and deterministic synthetic layers.
//!
//! Tensor files are headerless little-endian `f32`, row-major. Shapes live in
//! `manifest.json` next to them:
//!
//! ```json
//! {"version": 1, "layers": [{"name": "fc1", "weight": "fc1.weight.f32",
//!   "calib": "fc1.calib.f32", "n": 64, "m": 64, "r": 128}]}
//! ```
//!
//! `n × m` is the weight shape (out × in); the calibration tensor is `r × m`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::rng::SplitMix64;
use crate::tensor::{Tensor2D, TensorError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("layer '{layer}': missing file {}", path.display())]
    MissingFile { layer: String, path: PathBuf },
    #[error("manifest schema violation{}: {reason}", layer.as_ref().map(|l| format!(" in layer '{l}'")).unwrap_or_default())]
    SchemaViolation { layer: Option<String>, reason: String },
    #[error("layer '{layer}': shape mismatch: {detail}")]
    ShapeMismatch { layer: String, detail: String },
    #[error("{}: expected {expected} bytes, found {actual}", path.display())]
    SizeMismatch { path: PathBuf, expected: u64, actual: u64 },
    #[error("{}: non-finite value at index {index}", path.display())]
    NonFiniteValue { path: PathBuf, index: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TensorIoError + '_ {
    move |source| TensorIoError::Io { path: path.to_path_buf(), source }
}

/// A weight matrix with the calibration activations that feed it.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub weight: Tensor2D,
    pub calibration: Tensor2D,
}

impl LayerRecord {
    pub fn new(name: impl Into<String>, weight: Tensor2D, calibration: Tensor2D) -> Result<Self, TensorIoError> {
        let name = name.into();
        if calibration.cols() != weight.cols() {
            return Err(TensorIoError::ShapeMismatch {
                detail: format!(
                    "calibration has {} features but weight has {} input columns",
                    calibration.cols(),
                    weight.cols()
                ),
                layer: name,
            });
        }
        Ok(Self { name, weight, calibration })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub weight: PathBuf,
    pub calib: PathBuf,
    pub n: usize,
    pub m: usize,
    pub r: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    version: u32,
    layers: Vec<ManifestEntry>,
}

/// A validated manifest. Entry paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelManifest {
    pub version: u32,
    pub root: PathBuf,
    pub layers: Vec<ManifestEntry>,
}

impl ModelManifest {
    pub fn weight_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.weight)
    }

    pub fn calib_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.calib)
    }

    pub fn load_layer(&self, entry: &ManifestEntry) -> Result<LayerRecord, TensorIoError> {
        let weight = load_tensor(&self.weight_path(entry), entry.n, entry.m)?;
        let calibration = load_tensor(&self.calib_path(entry), entry.r, entry.m)?;
        LayerRecord::new(entry.name.clone(), weight, calibration)
    }

    pub fn load_layers(&self) -> Result<Vec<LayerRecord>, TensorIoError> {
        self.layers.iter().map(|e| self.load_layer(e)).collect()
    }
}

/// Reads and validates `path` (a manifest file, or a directory containing
/// `manifest.json`).
pub fn load_manifest(path: &Path) -> Result<ModelManifest, TensorIoError> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(io_err(&file))?;
    let parsed: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| TensorIoError::SchemaViolation { layer: None, reason: e.to_string() })?;
    if parsed.version != MANIFEST_VERSION {
        return Err(TensorIoError::SchemaViolation {
            layer: None,
            reason: format!("unsupported version {}", parsed.version),
        });
    }
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut seen = HashSet::new();
    for entry in &parsed.layers {
        if !seen.insert(entry.name.as_str()) {
            return Err(TensorIoError::SchemaViolation {
                layer: Some(entry.name.clone()),
                reason: "duplicate layer name".into(),
            });
        }
        if entry.n == 0 || entry.m == 0 || entry.r == 0 {
            return Err(TensorIoError::SchemaViolation {
                layer: Some(entry.name.clone()),
                reason: "n, m and r must be positive".into(),
            });
        }
        for (rel, rows, what) in [(&entry.weight, entry.n, "weight"), (&entry.calib, entry.r, "calib")] {
            let full = root.join(rel);
            let meta = fs::metadata(&full)
                .map_err(|_| TensorIoError::MissingFile { layer: entry.name.clone(), path: full.clone() })?;
            let expected = (rows * entry.m * 4) as u64;
            if meta.len() != expected {
                return Err(TensorIoError::ShapeMismatch {
                    layer: entry.name.clone(),
                    detail: format!(
                        "{what} file {} holds {} bytes, shape {rows}x{} needs {expected}",
                        full.display(),
                        meta.len(),
                        entry.m
                    ),
                });
            }
        }
    }
    Ok(ModelManifest { version: parsed.version, root, layers: parsed.layers })
}

pub fn decode_f32_le(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

pub fn load_tensor(path: &Path, rows: usize, cols: usize) -> Result<Tensor2D, TensorIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let expected = (rows * cols * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(TensorIoError::SizeMismatch { path: path.to_path_buf(), expected, actual: bytes.len() as u64 });
    }
    Tensor2D::new(rows, cols, decode_f32_le(&bytes)).map_err(|e| match e {
        TensorError::NonFinite { index } => TensorIoError::NonFiniteValue { path: path.to_path_buf(), index },
        TensorError::LengthMismatch { .. } => unreachable!("length checked above"),
    })
}

pub fn save_tensor(path: &Path, tensor: &Tensor2D) -> Result<(), TensorIoError> {
    let bytes: Vec<u8> = tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

/// Filesystem-safe form of a layer name.
pub fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes every layer's tensors plus `manifest.json` into `dir`.
pub fn write_model(dir: &Path, layers: &[LayerRecord]) -> Result<ModelManifest, TensorIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(layers.len());
    for layer in layers {
        let stem = file_stem(&layer.name);
        let weight = PathBuf::from(format!("{stem}.weight.f32"));
        let calib = PathBuf::from(format!("{stem}.calib.f32"));
        save_tensor(&dir.join(&weight), &layer.weight)?;
        save_tensor(&dir.join(&calib), &layer.calibration)?;
        entries.push(ManifestEntry {
            name: layer.name.clone(),
            weight,
            calib,
            n: layer.weight.rows(),
            m: layer.weight.cols(),
            r: layer.calibration.rows(),
        });
    }
    let file = ManifestFile { version: MANIFEST_VERSION, layers: entries };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&file).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    load_manifest(&path)
}

/// Lower Cholesky factor of the `dim × dim` matrix with unit diagonal and
/// `correlation` everywhere else.
fn constant_correlation_factor(dim: usize, correlation: f64) -> Vec<f64> {
    let mut c = vec![correlation; dim * dim];
    for i in 0..dim {
        c[i * dim + i] = 1.0;
    }
    linalg::cholesky_lower(&c, dim).expect("constant correlation in [0,1) is positive definite")
}

/// Deterministic synthetic layer.
///
/// Draw order from `SplitMix64::new(seed)`: the `n × m` weight entries
/// row-major, then for each of the `r` calibration rows, `m` standard normals
/// `z` which are mapped to `L z`, with `L` the lower Cholesky factor of the
/// constant-correlation matrix.
pub fn synth_layer(n: usize, m: usize, r: usize, seed: u64, correlation: f64) -> LayerRecord {
    assert!(n >= 1 && m >= 1 && r >= 1, "synth_layer needs positive dimensions");
    assert!((0.0..1.0).contains(&correlation), "correlation must be in [0, 1)");
    let mut rng = SplitMix64::new(seed);
    let weight: Vec<f32> = (0..n * m).map(|_| rng.next_normal() as f32).collect();

    let factor = constant_correlation_factor(m, correlation);
    let mut calib = Vec::with_capacity(r * m);
    let mut z = vec![0.0f64; m];
    for _ in 0..r {
        z.iter_mut().for_each(|v| *v = rng.next_normal());
        for i in 0..m {
            let v: f64 = (0..=i).map(|k| factor[i * m + k] * z[k]).sum();
            calib.push(v as f32);
        }
    }
    LayerRecord {
        name: format!("synth_{seed}"),
        weight: Tensor2D::new(n, m, weight).expect("normal draws are finite"),
        calibration: Tensor2D::new(r, m, calib).expect("normal draws are finite"),
    }
}

/// `layers` synthetic layers named `layer_0..`, each seeded from `seed`.
pub fn synth_model(layers: usize, n: usize, m: usize, r: usize, seed: u64, correlation: f64) -> Vec<LayerRecord> {
    (0..layers)
        .map(|i| {
            let mut rec = synth_layer(n, m, r, SplitMix64::derive(seed, i as u64), correlation);
            rec.name = format!("layer_{i}");
            rec
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_tensor_decodes_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.f32");
        let bytes: Vec<u8> = [1.0f32, -1.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&path, bytes).unwrap();
        let t = load_tensor(&path, 1, 2).unwrap();
        assert_eq!(t.data(), &[1.0, -1.0]);
        assert!(matches!(load_tensor(&path, 2, 2), Err(TensorIoError::SizeMismatch { expected: 16, actual: 8, .. })));
    }

    #[test]
    fn load_tensor_reports_nan_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.f32");
        let bytes: Vec<u8> = [0.5f32, 2.0, f32::NAN].iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_tensor(&path, 1, 3), Err(TensorIoError::NonFiniteValue { index: 2, .. })));
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let layers = vec![synth_layer(4, 8, 16, 1, 0.0), synth_layer(4, 8, 16, 2, 0.0)];
        let manifest = write_model(dir.path(), &layers).unwrap();
        assert_eq!(manifest.layers.len(), 2);
        assert_eq!(manifest.load_layers().unwrap(), layers);

        fs::remove_file(dir.path().join("synth_2.calib.f32")).unwrap();
        match load_manifest(dir.path()) {
            Err(TensorIoError::MissingFile { layer, path }) => {
                assert_eq!(layer, "synth_2");
                assert!(path.ends_with("synth_2.calib.f32"));
            }
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn manifest_calibration_width_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let rec = synth_layer(4, 8, 16, 1, 0.0);
        save_tensor(&dir.path().join("w.f32"), &rec.weight).unwrap();
        // 16 rows of 6 features: calibration columns disagree with m = 8
        save_tensor(&dir.path().join("x.f32"), &Tensor2D::zeros(16, 6)).unwrap();
        let json = r#"{"version":1,"layers":[{"name":"a","weight":"w.f32","calib":"x.f32","n":4,"m":8,"r":16}]}"#;
        fs::write(dir.path().join(MANIFEST_FILE), json).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(TensorIoError::ShapeMismatch { layer, .. }) if layer == "a"));
    }

    #[test]
    fn manifest_schema_violations() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), r#"{"version":1,"layers":[{"name":"a"}]}"#).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(TensorIoError::SchemaViolation { .. })));
        fs::write(dir.path().join(MANIFEST_FILE), r#"{"version":2,"layers":[]}"#).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(TensorIoError::SchemaViolation { .. })));
    }

    #[test]
    fn record_rejects_feature_mismatch() {
        let err = LayerRecord::new("x", Tensor2D::zeros(2, 3), Tensor2D::zeros(5, 4)).unwrap_err();
        assert!(matches!(err, TensorIoError::ShapeMismatch { .. }));
    }

    #[test]
    fn synth_is_deterministic_and_seed_sensitive() {
        let a = synth_layer(4, 8, 16, 1, 0.0);
        assert_eq!(a, synth_layer(4, 8, 16, 1, 0.0));
        let b = synth_layer(4, 8, 16, 2, 0.0);
        assert_ne!(a.weight, b.weight);
        assert_ne!(a.calibration, b.calibration);
    }

    #[test]
    fn synth_feature_norms_vary() {
        let rec = synth_layer(64, 64, 128, 7, 0.5);
        let norms = rec.calibration.column_l2_norms();
        let max = norms.iter().cloned().fold(f64::MIN, f64::max);
        let min = norms.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min > 1.05, "ratio {}", max / min);
    }

    #[test]
    fn synth_correlation_is_realized() {
        let rec = synth_layer(1, 2, 20_000, 11, 0.6);
        let x = &rec.calibration;
        let (mut sxy, mut sxx, mut syy) = (0.0f64, 0.0f64, 0.0f64);
        for r in 0..x.rows() {
            let (a, b) = (f64::from(x.get(r, 0)), f64::from(x.get(r, 1)));
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
        }
        let rho = sxy / (sxx * syy).sqrt();
        assert!((rho - 0.6).abs() < 0.03, "rho {rho}");
    }

    proptest::proptest! {
        #[test]
        fn save_load_is_bit_identical(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
            let mut rng = SplitMix64::new(seed);
            let data: Vec<f32> = (0..rows * cols).map(|_| (rng.next_normal() * 1e3) as f32).collect();
            let t = Tensor2D::new(rows, cols, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.f32");
            save_tensor(&path, &t).unwrap();
            let back = load_tensor(&path, rows, cols).unwrap();
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            proptest::prop_assert!(same);
        }
    }
}
