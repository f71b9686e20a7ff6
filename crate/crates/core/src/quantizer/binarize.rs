use super::{BinaryAtom, Masked};

/// Per-row scale and sign: `alpha = mean |w|` over the row's supported
/// entries (0 for a row with no support), `sign(0) = +1`.
pub fn binarize_rowwise(w: Masked<'_>) -> BinaryAtom {
    let mut atom = BinaryAtom::empty(w.rows, w.cols);
    for r in 0..w.rows {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for c in 0..w.cols {
            let k = r * w.cols + c;
            if w.support[k] {
                let v = w.values[k];
                sum += v.abs();
                count += 1;
                atom.support[k] = true;
                atom.negative[k] = v < 0.0;
            }
        }
        atom.alpha[r] = if count == 0 { 0.0 } else { (sum / count as f64) as f32 };
    }
    atom
}

/// Two-stage binarization: binarize `w`, then binarize what the first stage
/// missed. The approximation is `first + second`.
pub fn residual_binarize(w: Masked<'_>) -> (BinaryAtom, BinaryAtom) {
    let first = binarize_rowwise(w);
    let mut residual = vec![0.0f64; w.values.len()];
    for r in 0..w.rows {
        for c in 0..w.cols {
            let k = r * w.cols + c;
            if w.support[k] {
                residual[k] = w.values[k] - first.value(r, c);
            }
        }
    }
    let second = binarize_rowwise(Masked { values: &residual, ..w });
    (first, second)
}
