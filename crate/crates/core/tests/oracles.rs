use nalgebra::DMatrix;
use proptest::prelude::*;
use rand_xoshiro::rand_core::{RngCore, SeedableRng};

use structbin::allocation::NMRatio;
use structbin::compensation::{build_hessian, gram};
use structbin::packing::{decode, encode};
use structbin::pipeline::{quantize_layer, QuantConfig};
use structbin::quantizer::{binarize_rowwise, reconstruct, trisection_search, Masked, RegionCode};
use structbin::rng::SplitMix64;
use structbin::tensor::Tensor2D;
use structbin::tensorio::synth_layer;

fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor2D {
    let mut rng = SplitMix64::new(seed);
    Tensor2D::new(rows, cols, (0..rows * cols).map(|_| rng.next_normal() as f32).collect()).unwrap()
}

fn to_dmatrix(t: &Tensor2D) -> DMatrix<f64> {
    DMatrix::from_row_iterator(t.rows(), t.cols(), t.data().iter().map(|&v| f64::from(v)))
}

#[test]
fn gram_matches_dense_product() {
    let x = random_tensor(30, 12, 3);
    let xm = to_dmatrix(&x);
    let expected = 2.0 * xm.transpose() * &xm;
    let got = gram(&x);
    for i in 0..12 {
        for j in 0..12 {
            assert!((got[i * 12 + j] - expected[(i, j)]).abs() < 1e-9);
        }
    }
}

#[test]
fn hessian_factor_squares_to_damped_inverse() {
    for seed in 0..5 {
        let x = random_tensor(40, 16, 100 + seed);
        let ctx = build_hessian(&x, 0.01).unwrap();
        let xm = to_dmatrix(&x);
        let damped = 2.0 * xm.transpose() * &xm + DMatrix::identity(16, 16) * ctx.lambda_used;
        let inverse = damped.try_inverse().expect("damped Hessian is invertible");
        let u = DMatrix::from_row_slice(16, 16, ctx.factor_matrix());
        let product = u.transpose() * &u;
        let scale = inverse.amax();
        for i in 0..16 {
            for j in 0..16 {
                if i > j {
                    assert_eq!(u[(i, j)], 0.0, "factor must be upper triangular");
                }
                assert!((product[(i, j)] - inverse[(i, j)]).abs() <= 1e-5 * scale, "seed {seed} ({i},{j})");
            }
        }
    }
}

#[test]
fn rank_deficient_calibration_is_damped() {
    // fewer samples than features: XᵀX is singular, damping makes it definite
    let x = random_tensor(4, 16, 9);
    let ctx = build_hessian(&x, 0.01).unwrap();
    assert!((0..16).all(|j| ctx.factor(j, j) > 0.0));
}

#[test]
fn splitmix_matches_reference_implementation() {
    for seed in [0u64, 1, 42, u64::MAX, 0x0123_4567_89AB_CDEF] {
        let mut reference = rand_xoshiro::SplitMix64::seed_from_u64(seed);
        let mut ours = SplitMix64::new(seed);
        for _ in 0..1000 {
            assert_eq!(ours.next_u64(), reference.next_u64());
        }
    }
}

fn small_layer(
    seed: u64,
    rows: usize,
    cols: usize,
    n: usize,
    m: usize,
    blocks: usize,
) -> structbin::StructuredBinaryLayer {
    let nm = NMRatio::new(n.min(m), m).unwrap();
    let rec = synth_layer(rows, cols, 8, seed, 0.3);
    let config = QuantConfig { nm, block_size: m * blocks, ..QuantConfig::default() };
    quantize_layer(&rec, nm, &config).unwrap().layer
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn packed_layers_round_trip(
        seed in any::<u64>(),
        rows in 1usize..8,
        cols in 1usize..40,
        n in 1usize..9,
        m in prop::sample::select(vec![1usize, 2, 4, 8]),
        blocks in 1usize..4,
    ) {
        let layer = small_layer(seed, rows, cols, n, m, blocks);
        let bytes = encode(&layer).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), layer);
    }

    #[test]
    fn decoding_corrupted_bytes_never_panics(
        seed in any::<u64>(),
        flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6),
    ) {
        let layer = small_layer(seed, 4, 16, 4, 8, 1);
        let mut bytes = encode(&layer).unwrap();
        for (at, xor) in flips {
            let i = at.index(bytes.len());
            bytes[i] ^= xor;
        }
        if let Ok(decoded) = decode(&bytes) {
            prop_assert!(decoded.validate().is_ok());
        }
    }

    #[test]
    fn every_full_bank_keeps_n_entries(
        seed in any::<u64>(),
        rows in 1usize..6,
        banks in 1usize..6,
        n in 1usize..9,
    ) {
        let layer = small_layer(seed, rows, 8 * banks, n, 8, 2);
        let n = n.min(8);
        let recon = reconstruct(&layer);
        for block in &layer.blocks {
            let width = block.width();
            for r in 0..rows {
                for bank in (0..width).step_by(8) {
                    let kept = (bank..bank + 8)
                        .filter(|&c| block.region_codes[r * width + c] != RegionCode::Pruned)
                        .count();
                    prop_assert_eq!(kept, n);
                    for c in bank..bank + 8 {
                        if block.region_codes[r * width + c] == RegionCode::Pruned {
                            prop_assert_eq!(recon.get(r, block.col_range.0 + c), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rowwise_scale_is_mean_magnitude(values in prop::collection::vec(-10.0f64..10.0, 1..32)) {
        let support = vec![true; values.len()];
        let atom = binarize_rowwise(Masked::new(1, values.len(), &values, &support));
        let mean = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
        for (c, &v) in values.iter().enumerate() {
            let expected_sign = if v < 0.0 { -1 } else { 1 };
            prop_assert_eq!(atom.sign(0, c), Some(expected_sign));
            prop_assert_eq!(atom.value(0, c).abs(), f64::from(mean as f32));
        }
    }

    #[test]
    fn trisection_break_points_are_ordered(seed in any::<u64>(), sigma in 1.1f64..4.0) {
        let w: Vec<f64> = random_tensor(6, 12, seed).data().iter().map(|&v| f64::from(v)).collect();
        let support = vec![true; w.len()];
        let masked = Masked::new(6, 12, &w, &support);
        let max = masked.max_abs();
        let params = trisection_search(masked, sigma, 40).unwrap();
        prop_assert!(params.p1 > 0.0 && params.p1 < params.p2);
        prop_assert!(f64::from(params.p2) <= 0.9 * max);
    }
}
