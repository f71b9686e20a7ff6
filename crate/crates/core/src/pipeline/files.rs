use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::packing::{decode, PACKED_EXTENSION};
use crate::quantizer::StructuredBinaryLayer;
use crate::tensorio::{file_stem, load_manifest};

use super::{quantize_model, LayerReport, QuantConfig, QuantReport};

pub fn packed_file_name(layer_name: &str) -> String {
    format!("{}.{PACKED_EXTENSION}", file_stem(layer_name))
}

pub fn load_packed(path: &Path) -> Result<StructuredBinaryLayer> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|source| Error::Pack { layer: path.display().to_string(), source })
}

pub fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

/// Quantizes every layer of a manifest and writes one packed file per layer
/// into `out_dir`.
pub fn quantize_manifest(
    manifest: &Path,
    out_dir: &Path,
    config: &QuantConfig,
    with_timings: bool,
) -> Result<QuantReport> {
    config.validate()?;
    let manifest = load_manifest(manifest)?;
    let layers = manifest.load_layers()?;
    let output = quantize_model(&layers, config)?;
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    for layer in &output.layers {
        let path = out_dir.join(&layer.report.packed_file);
        fs::write(&path, &layer.packed).map_err(Error::io(&path))?;
    }
    Ok(output.report(config, with_timings))
}

/// Evaluates the packed files in `packed_dir` against the manifest's
/// original weights and calibration.
pub fn report_packed(packed_dir: &Path, manifest: &Path) -> Result<Vec<LayerReport>> {
    let manifest = load_manifest(manifest)?;
    manifest
        .layers
        .iter()
        .map(|entry| {
            let record = manifest.load_layer(entry)?;
            let path = packed_dir.join(packed_file_name(&entry.name));
            let bytes = fs::read(&path).map_err(Error::io(&path))?;
            let layer = decode(&bytes).map_err(|source| Error::Pack { layer: entry.name.clone(), source })?;
            if (layer.rows, layer.cols) != (entry.n, entry.m) {
                return Err(Error::Config(format!(
                    "{} is {}x{} but the manifest says {}x{}",
                    path.display(),
                    layer.rows,
                    layer.cols,
                    entry.n,
                    entry.m
                )));
            }
            Ok(LayerReport::from_layer(&record, &layer, bytes.len()))
        })
        .collect()
}
