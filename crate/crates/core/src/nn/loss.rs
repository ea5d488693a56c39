//! Softmax cross-entropy with per-class weights.

use ndarray::{Array1, Array2};

use super::Tensor2;

/// Row-wise softmax, numerically stabilized.
pub fn softmax(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        row.mapv_inplace(|v| (v - m).exp());
        let sum: f32 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Class-weighted cross-entropy, averaged with the weighted-mean convention:
/// `loss = sum_i w[y_i] * (-log p_i[y_i]) / sum_i w[y_i]`.
///
/// Returns the loss and its gradient w.r.t. the logits. With all weights at
/// 1 this is the plain mean cross-entropy.
pub fn weighted_cross_entropy(
    logits: &Tensor2,
    labels: &[usize],
    class_weights: &[f32],
) -> (f32, Tensor2) {
    let (n, c) = logits.dim();
    assert_eq!(n, labels.len(), "one label per row");
    assert_eq!(c, class_weights.len(), "one weight per class");

    let probs = softmax(logits);
    let weights: Array1<f32> = labels.iter().map(|&y| class_weights[y]).collect();
    let weight_sum: f32 = weights.sum();
    assert!(weight_sum > 0.0, "class weights must not sum to zero");

    let mut loss = 0.0f64;
    let mut grad = Array2::zeros((n, c));
    for i in 0..n {
        let y = labels[i];
        assert!(y < c, "label {y} out of range [0, {c})");
        let w = weights[i];
        let p = probs[[i, y]].max(1e-12);
        loss += (w as f64) * -(p as f64).ln();
        for j in 0..c {
            let indicator = if j == y { 1.0 } else { 0.0 };
            grad[[i, j]] = w * (probs[[i, j]] - indicator) / weight_sum;
        }
    }
    ((loss / weight_sum as f64) as f32, grad)
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Tensor2, labels: &[usize]) -> f64 {
    let n = logits.dim().0;
    if n == 0 {
        return 0.0;
    }
    let mut correct = 0usize;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let mut best = (0usize, f32::NEG_INFINITY);
        for (j, &v) in row.iter().enumerate() {
            if v > best.1 {
                best = (j, v);
            }
        }
        if best.0 == y {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = array![[0.0f32, 0.0, 0.0]];
        let (loss, _) = weighted_cross_entropy(&logits, &[1], &[1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(loss, 3.0f32.ln(), epsilon = 1e-6);
    }

    #[test]
    fn unit_weights_match_plain_mean() {
        let logits = array![[2.0f32, -1.0, 0.5], [0.0, 1.0, -2.0]];
        let labels = [0usize, 1];
        let (w_loss, w_grad) = weighted_cross_entropy(&logits, &labels, &[1.0, 1.0, 1.0]);
        // Plain mean computed by hand from softmax rows.
        let probs = softmax(&logits);
        let plain = (-(probs[[0, 0]].ln()) - probs[[1, 1]].ln()) / 2.0;
        assert_abs_diff_eq!(w_loss, plain, epsilon = 1e-6);
        // Gradient rows sum to zero.
        for row in w_grad.rows() {
            assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::seed::rng(4, &[9]);
        let mut logits = Array2::zeros((5, 3));
        for v in logits.iter_mut() {
            *v = rng.random_range(-2.0..=2.0f32);
        }
        let labels = [0usize, 2, 1, 1, 0];
        let weights = [0.5f32, 2.0, 1.0];
        let (_, grad) = weighted_cross_entropy(&logits, &labels, &weights);
        let eps = 1e-3f32;
        for i in 0..logits.len() {
            let orig = logits.as_slice_mut().unwrap()[i];
            logits.as_slice_mut().unwrap()[i] = orig + eps;
            let (up, _) = weighted_cross_entropy(&logits, &labels, &weights);
            logits.as_slice_mut().unwrap()[i] = orig - eps;
            let (down, _) = weighted_cross_entropy(&logits, &labels, &weights);
            logits.as_slice_mut().unwrap()[i] = orig;
            let num = (up - down) / (2.0 * eps);
            assert!(
                (grad.as_slice().unwrap()[i] - num).abs() < 1e-3,
                "entry {i}: {} vs {num}",
                grad.as_slice().unwrap()[i]
            );
        }
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let logits = array![[0.9f32, 0.1], [0.2, 0.8], [0.6, 0.4]];
        assert_abs_diff_eq!(accuracy(&logits, &[0, 1, 1]), 2.0 / 3.0, epsilon = 1e-12);
    }
}
