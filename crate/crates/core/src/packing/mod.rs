//! Binary serialization of quantized layers and bit accounting.
//!
//! Layout, little-endian integers, bit streams MSB-first and zero-padded to a
//! byte boundary:
//!
//! ```text
//! "STBL" | version u16
//! name_len u16 | name | rows u32 | cols u32 | beta u16 | n u8 | m u8 | flags u16
//! block_count u32
//! per block:
//!   col_start u32 | col_end u32
//!   salient_count u16 | salient columns u16 × count       (block-local)
//!   kept indices    ceil(log2 m) bits per kept entry       (position in bank)
//!   region codes    2 bits per kept non-salient entry      (0 sparse, 1 intermediate, 2 dense)
//!   salient signs   1 bit per kept salient entry, twice    (original, residual)
//!   other signs     1 bit per kept non-salient entry
//!   p1 f32 | p2 f32
//!   scales          5 × f32 per row                        (original, residual, sparse, intermediate, dense)
//! ```
//!
//! Kept indices are written row by row and bank by bank, ascending. Every
//! other per-entry stream walks the block row-major. A sign bit of 1 means −1.

mod bits;
mod report;

pub use bits::index_width;
pub use report::{bit_report, table_bits, BitReport};

use thiserror::Error;

use crate::allocation::{NMRatio, MAX_BANK};
use crate::quantizer::{
    bank_segments, BinaryAtom, BlockQuantResult, RegionAtoms, RegionCode, SalientAtoms, StructuredBinaryLayer,
    TrisectionParams,
};
use bits::{BitWriter, ByteReader};

pub const MAGIC: &[u8; 4] = b"STBL";
pub const FORMAT_VERSION: u16 = 1;
/// Extension used for packed layer files.
pub const PACKED_EXTENSION: &str = "stbl";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PackError {
    #[error("not a packed layer (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("stream truncated at byte {offset}")]
    TruncatedStream { offset: usize },
    #[error("bank width {m} exceeds the format limit of {MAX_BANK}")]
    OverflowingIndex { m: usize },
    #[error("{field} = {value} does not fit its field")]
    FieldOverflow { field: &'static str, value: usize },
    #[error("layer is not valid: {0}")]
    InvalidLayer(String),
    #[error("corrupt stream at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
}

fn fit_u16(field: &'static str, value: usize) -> Result<u16, PackError> {
    u16::try_from(value).map_err(|_| PackError::FieldOverflow { field, value })
}

fn fit_u32(field: &'static str, value: usize) -> Result<u32, PackError> {
    u32::try_from(value).map_err(|_| PackError::FieldOverflow { field, value })
}

fn region_bits(code: RegionCode) -> u32 {
    match code {
        RegionCode::Sparse => 0,
        RegionCode::Intermediate => 1,
        RegionCode::Dense => 2,
        other => unreachable!("{other:?} has no region code"),
    }
}

/// Serializes a layer. Deterministic: equal layers give equal bytes.
pub fn encode(layer: &StructuredBinaryLayer) -> Result<Vec<u8>, PackError> {
    if layer.nm.m > MAX_BANK {
        return Err(PackError::OverflowingIndex { m: layer.nm.m });
    }
    layer.validate().map_err(PackError::InvalidLayer)?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&fit_u16("name length", layer.name.len())?.to_le_bytes());
    out.extend_from_slice(layer.name.as_bytes());
    out.extend_from_slice(&fit_u32("rows", layer.rows)?.to_le_bytes());
    out.extend_from_slice(&fit_u32("cols", layer.cols)?.to_le_bytes());
    out.extend_from_slice(&fit_u16("block size", layer.block_size)?.to_le_bytes());
    out.push(layer.nm.n as u8);
    out.push(layer.nm.m as u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&fit_u32("block count", layer.blocks.len())?.to_le_bytes());
    for block in &layer.blocks {
        encode_block(&mut out, block, layer.nm)?;
    }
    Ok(out)
}

fn encode_block(out: &mut Vec<u8>, block: &BlockQuantResult, nm: NMRatio) -> Result<(), PackError> {
    let (start, end) = block.col_range;
    let width = block.width();
    out.extend_from_slice(&fit_u32("column", start)?.to_le_bytes());
    out.extend_from_slice(&fit_u32("column", end)?.to_le_bytes());
    out.extend_from_slice(&fit_u16("salient count", block.salient_cols.len())?.to_le_bytes());
    for &c in &block.salient_cols {
        out.extend_from_slice(&fit_u16("salient column", c)?.to_le_bytes());
    }

    let idx_bits = index_width(nm.m);
    let mut kept = BitWriter::new();
    for r in 0..block.rows {
        for (seg_start, seg_end) in bank_segments(start, end, nm.m) {
            for abs in seg_start..seg_end {
                if block.nm_mask[r * width + abs - start] {
                    kept.push_bits((abs % nm.m) as u32, idx_bits);
                }
            }
        }
    }
    out.extend(kept.finish());

    let mut codes = BitWriter::new();
    let mut original = BitWriter::new();
    let mut residual = BitWriter::new();
    let mut other = BitWriter::new();
    for (k, &code) in block.region_codes.iter().enumerate() {
        match code {
            RegionCode::Pruned => {}
            RegionCode::Salient => {
                original.push(block.salient.original.negative[k]);
                residual.push(block.salient.residual.negative[k]);
            }
            region => {
                codes.push_bits(region_bits(region), 2);
                other.push(block.non_salient.get(region).expect("region atom").negative[k]);
            }
        }
    }
    for stream in [codes, original, residual, other] {
        out.extend(stream.finish());
    }

    out.extend_from_slice(&block.trisection.p1.to_le_bytes());
    out.extend_from_slice(&block.trisection.p2.to_le_bytes());
    let atoms = [
        &block.salient.original,
        &block.salient.residual,
        &block.non_salient.sparse,
        &block.non_salient.intermediate,
        &block.non_salient.dense,
    ];
    for r in 0..block.rows {
        for atom in atoms {
            out.extend_from_slice(&atom.alpha[r].to_le_bytes());
        }
    }
    Ok(())
}

fn corrupt(offset: usize, reason: impl Into<String>) -> PackError {
    PackError::Corrupt { offset, reason: reason.into() }
}

/// Inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<StructuredBinaryLayer, PackError> {
    let mut rd = ByteReader::new(bytes);
    if rd.take(4).map_err(|_| PackError::BadMagic)? != MAGIC {
        return Err(PackError::BadMagic);
    }
    let version = rd.u16()?;
    if version != FORMAT_VERSION {
        return Err(PackError::UnsupportedVersion(version));
    }
    let name_len = rd.u16()? as usize;
    let name_at = rd.position();
    let name =
        std::str::from_utf8(rd.take(name_len)?).map_err(|_| corrupt(name_at, "layer name is not UTF-8"))?.to_owned();
    let rows = rd.u32()? as usize;
    let cols = rd.u32()? as usize;
    let block_size = rd.u16()? as usize;
    let (n, m) = (rd.u8()? as usize, rd.u8()? as usize);
    let nm = NMRatio::new(n, m).map_err(|_| corrupt(rd.position() - 2, format!("invalid ratio {n}:{m}")))?;
    let flags = rd.u16()?;
    if flags != 0 {
        return Err(corrupt(rd.position() - 2, format!("unknown flags {flags:#06x}")));
    }
    if rows == 0 || cols == 0 {
        return Err(corrupt(rd.position(), "empty layer shape"));
    }
    let block_count = rd.u32()? as usize;
    if block_count > cols {
        return Err(corrupt(rd.position() - 4, format!("{block_count} blocks for {cols} columns")));
    }
    let mut blocks = Vec::with_capacity(block_count);
    for _ in 0..block_count {
        blocks.push(decode_block(&mut rd, rows, cols, nm)?);
    }
    if rd.remaining() != 0 {
        return Err(corrupt(rd.position(), format!("{} trailing bytes", rd.remaining())));
    }
    let layer = StructuredBinaryLayer { name, rows, cols, block_size, nm, blocks };
    layer.validate().map_err(|e| corrupt(bytes.len(), e))?;
    Ok(layer)
}

fn decode_block(rd: &mut ByteReader<'_>, rows: usize, cols: usize, nm: NMRatio) -> Result<BlockQuantResult, PackError> {
    let at = rd.position();
    let start = rd.u32()? as usize;
    let end = rd.u32()? as usize;
    if start >= end || end > cols {
        return Err(corrupt(at, format!("block columns [{start}, {end}) outside [0, {cols})")));
    }
    let width = end - start;
    let len = rows * width;

    let salient_count = rd.u16()? as usize;
    let at = rd.position();
    let mut salient_cols = Vec::with_capacity(salient_count.min(width));
    for _ in 0..salient_count {
        salient_cols.push(rd.u16()? as usize);
    }
    if salient_cols.windows(2).any(|w| w[0] >= w[1]) || salient_cols.iter().any(|&c| c >= width) {
        return Err(corrupt(at, "salient columns not ascending or out of range"));
    }
    let mut is_salient = vec![false; width];
    salient_cols.iter().for_each(|&c| is_salient[c] = true);

    let idx_bits = index_width(nm.m);
    let segments: Vec<(usize, usize)> = bank_segments(start, end, nm.m).collect();
    let per_row: usize = segments.iter().map(|&(s, e)| nm.n.min(e - s)).sum();
    let at = rd.position();
    let mut kept = rd.bitstream(rows * per_row * idx_bits as usize)?;
    let mut nm_mask = vec![false; len];
    for r in 0..rows {
        for &(seg_start, seg_end) in &segments {
            let bank_start = seg_start - seg_start % nm.m;
            let mut last = None;
            for _ in 0..nm.n.min(seg_end - seg_start) {
                let abs = bank_start + kept.bits(idx_bits) as usize;
                if abs < seg_start || abs >= seg_end || last.is_some_and(|l| abs <= l) {
                    return Err(corrupt(at, format!("kept index {abs} invalid in bank [{seg_start}, {seg_end})")));
                }
                last = Some(abs);
                nm_mask[r * width + abs - start] = true;
            }
        }
    }
    if !kept.padding_is_zero() {
        return Err(corrupt(at, "nonzero padding in kept-index stream"));
    }

    let salient_kept = (0..len).filter(|&k| nm_mask[k] && is_salient[k % width]).count();
    let other_kept = (0..len).filter(|&k| nm_mask[k] && !is_salient[k % width]).count();

    let at = rd.position();
    let mut code_stream = rd.bitstream(2 * other_kept)?;
    let mut region_codes = vec![RegionCode::Pruned; len];
    for k in 0..len {
        if !nm_mask[k] {
            continue;
        }
        region_codes[k] = if is_salient[k % width] {
            RegionCode::Salient
        } else {
            match code_stream.bits(2) {
                0 => RegionCode::Sparse,
                1 => RegionCode::Intermediate,
                2 => RegionCode::Dense,
                _ => return Err(corrupt(at, "region code 3 is reserved")),
            }
        };
    }
    if !code_stream.padding_is_zero() {
        return Err(corrupt(at, "nonzero padding in region-code stream"));
    }

    let mut planes = Vec::with_capacity(3);
    for count in [salient_kept, salient_kept, other_kept] {
        let at = rd.position();
        let mut stream = rd.bitstream(count)?;
        let signs: Vec<bool> = (0..count).map(|_| stream.bit()).collect();
        if !stream.padding_is_zero() {
            return Err(corrupt(at, "nonzero padding in sign stream"));
        }
        planes.push(signs);
    }
    let other_signs = planes.pop().expect("three planes");
    let residual_signs = planes.pop().expect("three planes");
    let original_signs = planes.pop().expect("three planes");

    let trisection = TrisectionParams { p1: rd.f32()?, p2: rd.f32()? };
    let mut alphas = vec![vec![0.0f32; rows]; 5];
    for r in 0..rows {
        for table in alphas.iter_mut() {
            table[r] = rd.f32()?;
        }
    }

    let mut atoms: Vec<BinaryAtom> = (0..5).map(|_| BinaryAtom::empty(rows, width)).collect();
    for (atom, alpha) in atoms.iter_mut().zip(alphas) {
        atom.alpha = alpha;
    }
    let (mut si, mut oi) = (0, 0);
    for (k, &code) in region_codes.iter().enumerate() {
        match code {
            RegionCode::Pruned => {}
            RegionCode::Salient => {
                for (atom, signs) in atoms[..2].iter_mut().zip([&original_signs, &residual_signs]) {
                    atom.support[k] = true;
                    atom.negative[k] = signs[si];
                }
                si += 1;
            }
            region => {
                let atom = &mut atoms[2 + region_bits(region) as usize];
                atom.support[k] = true;
                atom.negative[k] = other_signs[oi];
                oi += 1;
            }
        }
    }
    let mut atoms = atoms.into_iter();
    let mut next = || atoms.next().expect("five atoms");
    Ok(BlockQuantResult {
        col_range: (start, end),
        rows,
        nm_mask,
        salient_cols,
        salient: SalientAtoms { original: next(), residual: next() },
        non_salient: RegionAtoms { sparse: next(), intermediate: next(), dense: next() },
        trisection,
        region_codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{quantize_block, reconstruct, BlockConfig};
    use crate::rng::SplitMix64;
    use crate::scoring::{LayerScorer, ScorerKind};
    use crate::tensor::Tensor2D;

    fn random_layer(seed: u64) -> StructuredBinaryLayer {
        let mut rng = SplitMix64::new(seed);
        let m = [1usize, 2, 4, 8, 16][rng.next_below(5) as usize];
        let nm = NMRatio::new(1 + rng.next_below(m as u64) as usize, m).unwrap();
        let rows = 1 + rng.next_below(9) as usize;
        let cols = 1 + rng.next_below(70) as usize;
        let block_size = m * (1 + rng.next_below(4) as usize);
        let w = Tensor2D::new(rows, cols, (0..rows * cols).map(|_| rng.next_normal() as f32).collect()).unwrap();
        let scorer = LayerScorer::new(ScorerKind::Magnitude, &w, &Tensor2D::zeros(1, cols)).unwrap();
        let cfg = BlockConfig { salient_cap: 0.1 + 0.9 * rng.next_f64(), ..BlockConfig::default() };
        let blocks = (0..cols)
            .step_by(block_size)
            .map(|start| {
                let end = (start + block_size).min(cols);
                let block = w.column_slice(start, end);
                let hc: Vec<f64> = (start..end).map(|_| 0.5 + rng.next_f64()).collect();
                quantize_block(&block, &scorer.score_block(&block, start), nm, start, &hc, &cfg).unwrap()
            })
            .collect();
        StructuredBinaryLayer { name: format!("layer_{seed}"), rows, cols, block_size, nm, blocks }
    }

    #[test]
    fn round_trip_is_exact_and_deterministic() {
        for seed in 0..60 {
            let layer = random_layer(seed);
            let bytes = encode(&layer).unwrap();
            assert_eq!(bytes, encode(&layer).unwrap());
            let back = decode(&bytes).unwrap();
            assert_eq!(back, layer, "seed {seed}");
            assert_eq!(reconstruct(&back), reconstruct(&layer));
        }
    }

    #[test]
    fn zero_layer_round_trips() {
        let w = Tensor2D::zeros(3, 8);
        let nm = NMRatio::new(2, 4).unwrap();
        let scorer = LayerScorer::new(ScorerKind::Magnitude, &w, &Tensor2D::zeros(1, 8)).unwrap();
        let block = quantize_block(&w, &scorer.score_block(&w, 0), nm, 0, &[1.0; 8], &BlockConfig::default()).unwrap();
        let layer =
            StructuredBinaryLayer { name: "zero".into(), rows: 3, cols: 8, block_size: 8, nm, blocks: vec![block] };
        assert_eq!(decode(&encode(&layer).unwrap()).unwrap(), layer);
    }

    #[test]
    fn header_errors() {
        let bytes = encode(&random_layer(3)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad), Err(PackError::BadMagic));
        assert_eq!(decode(b"ST"), Err(PackError::BadMagic));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(decode(&bad), Err(PackError::UnsupportedVersion(2)));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(decode(&bad), Err(PackError::Corrupt { .. })));
    }

    #[test]
    fn every_truncation_is_reported() {
        let bytes = encode(&random_layer(11)).unwrap();
        for cut in 4..bytes.len() {
            match decode(&bytes[..cut]) {
                Err(PackError::TruncatedStream { offset }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn invalid_layers_are_rejected() {
        let mut layer = random_layer(5);
        layer.cols += 1;
        assert!(matches!(encode(&layer), Err(PackError::InvalidLayer(_))));
    }
}
