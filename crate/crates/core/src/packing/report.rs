use serde::{Deserialize, Serialize};

use crate::quantizer::{RegionCode, StructuredBinaryLayer};

/// Storage accounting for one quantized layer.
///
/// `avg_bits_paper` counts only weight sign planes: salient weights carry two,
/// every other kept weight one, scaled by the kept ratio `n/m`. It leaves out
/// mask indices, region codes and scales. `avg_bits_packed` is the real file
/// size in bits per original weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitReport {
    pub r_salient: f64,
    pub b_size: usize,
    pub n: usize,
    pub m: usize,
    pub n_param: f64,
    pub n_storing: f64,
    pub avg_bits_paper: f64,
    pub avg_bits_packed: f64,
}

/// `base · n / m`.
pub fn table_bits(base: f64, n: usize, m: usize) -> f64 {
    base * n as f64 / m as f64
}

fn accounting(r_salient: f64, b_size: usize, n: usize, m: usize, packed_bytes: usize, elements: usize) -> BitReport {
    let n_param = 2.0 * r_salient + (1.0 - r_salient);
    BitReport {
        r_salient,
        b_size,
        n,
        m,
        n_param,
        n_storing: 2.0 + 1.0 / b_size as f64,
        avg_bits_paper: table_bits(n_param, n, m),
        avg_bits_packed: 8.0 * packed_bytes as f64 / elements as f64,
    }
}

pub fn bit_report(layer: &StructuredBinaryLayer, packed_size_bytes: usize) -> BitReport {
    let kept = layer.kept_count();
    let r_salient = if kept == 0 { 0.0 } else { layer.count(RegionCode::Salient) as f64 / kept as f64 };
    accounting(r_salient, layer.block_size, layer.nm.n, layer.nm.m, packed_size_bytes, layer.rows * layer.cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_of_eight_with_nine_percent_salient() {
        let r = accounting(0.09, 128, 4, 8, 0, 1);
        assert!((r.n_param - 1.09).abs() < 1e-12);
        assert!((r.avg_bits_paper - 0.545).abs() < 1e-12);
        assert!((r.n_storing - 2.0078125).abs() < 1e-15);
    }

    #[test]
    fn no_salient_and_dense() {
        let r = accounting(0.0, 64, 3, 8, 0, 1);
        assert_eq!(r.n_param, 1.0);
        assert_eq!(r.avg_bits_paper, 0.375);
        let r = accounting(0.10, 128, 8, 8, 0, 1);
        assert!((r.avg_bits_paper - 1.10).abs() < 1e-12);
    }

    #[test]
    fn packed_bits_per_element() {
        assert_eq!(accounting(0.0, 128, 1, 1, 100, 800).avg_bits_packed, 1.0);
    }

    #[test]
    fn formula_bits_grow_with_ratio_and_salient_share() {
        let base = accounting(0.1, 128, 4, 8, 0, 1).avg_bits_paper;
        assert!(accounting(0.2, 128, 4, 8, 0, 1).avg_bits_paper > base);
        let six = accounting(0.1, 128, 6, 8, 0, 1).avg_bits_paper;
        assert!((six - 1.5 * base).abs() < 1e-12);
    }
}
