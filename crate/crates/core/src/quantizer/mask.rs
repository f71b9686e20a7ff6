use std::cmp::Ordering;

use crate::scoring::ScoreMatrix;

use super::bank_segments;

/// N:M keep-mask for a block whose first column sits at absolute layer column
/// `bank_offset`. Banks are `m` consecutive absolute columns starting at
/// multiples of `m`; each (row, bank) keeps its `min(n, width)` highest
/// scores, ties going to the lower column.
pub fn apply_nm_mask(scores: &ScoreMatrix, n: usize, m: usize, bank_offset: usize) -> Vec<bool> {
    assert!(m >= 1 && n <= m, "invalid N:M {n}:{m}");
    let (rows, cols) = (scores.rows(), scores.cols());
    let mut mask = vec![false; rows * cols];
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for r in 0..rows {
        for (start, end) in bank_segments(bank_offset, bank_offset + cols, m) {
            order.clear();
            order.extend(start - bank_offset..end - bank_offset);
            // stable sort keeps ascending column order among equal scores
            // scores are finite; -0.0 and 0.0 tie
            order.sort_by(|&a, &b| scores.get(r, b).partial_cmp(&scores.get(r, a)).unwrap_or(Ordering::Equal));
            for &c in order.iter().take(n) {
                mask[r * cols + c] = true;
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kept(mask: &[bool]) -> Vec<usize> {
        mask.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
    }

    #[test]
    fn top_two_of_four() {
        let s = ScoreMatrix::new(1, 4, vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!(kept(&apply_nm_mask(&s, 2, 4, 0)), vec![0, 2]);
    }

    #[test]
    fn dense_ratio_keeps_everything() {
        let s = ScoreMatrix::new(2, 8, (0..16).map(f64::from).collect());
        assert!(apply_nm_mask(&s, 8, 8, 0).iter().all(|&k| k));
    }

    #[test]
    fn signed_zeros_tie() {
        let s = ScoreMatrix::new(1, 3, vec![-0.0, 0.0, -1.0]);
        assert_eq!(kept(&apply_nm_mask(&s, 1, 3, 0)), vec![0]);
    }

    #[test]
    fn ties_break_to_lower_index() {
        let s = ScoreMatrix::new(1, 4, vec![1.0; 4]);
        assert_eq!(kept(&apply_nm_mask(&s, 2, 4, 0)), vec![0, 1]);
    }

    #[test]
    fn offset_banks_are_clipped() {
        // block covers absolute columns 2..8 with m = 4: banks [2,4) and [4,8)
        let s = ScoreMatrix::new(1, 6, vec![0.0, 5.0, 1.0, 2.0, 3.0, 0.5]);
        let mask = apply_nm_mask(&s, 2, 4, 2);
        assert_eq!(kept(&mask), vec![0, 1, 3, 4]);
        // a partial bank of width 1 keeps its single entry
        let s = ScoreMatrix::new(1, 1, vec![-9.0]);
        assert_eq!(kept(&apply_nm_mask(&s, 2, 4, 7)), vec![0]);
    }

    #[test]
    fn negative_scores_rank_correctly() {
        let s = ScoreMatrix::new(1, 4, vec![-1.0, -0.5, -3.0, -0.1]);
        assert_eq!(kept(&apply_nm_mask(&s, 1, 4, 0)), vec![3]);
    }
}
