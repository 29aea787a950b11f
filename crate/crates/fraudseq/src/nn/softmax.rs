//! Numerically stabilized softmax with mean cross-entropy loss.

use crate::tensor::Tensor;

/// Output of [`softmax_xent`].
pub struct SoftmaxXent {
    pub loss: f64,
    pub probs: Tensor,
    pub grad_logits: Tensor,
}

/// Two-class softmax + cross-entropy over a batch. Row maxima are
/// subtracted before exponentiating, so extreme logits cannot overflow.
/// The gradient is (probs - onehot) * weight / n; `pos_weight` scales the
/// contribution of fraud (label 1) rows and defaults to 1.
pub fn softmax_xent(logits: &Tensor, labels: &[u8], pos_weight: f64) -> SoftmaxXent {
    let n = logits.shape()[0];
    let classes = logits.shape()[1];
    assert_eq!(n, labels.len(), "logits rows vs labels");
    assert!(labels.iter().all(|&l| (l as usize) < classes));
    let mut probs = Tensor::zeros(logits.shape());
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for r in 0..n {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let weight = if labels[r] == 1 { pos_weight } else { 1.0 };
        let prow = probs.row_mut(r);
        for (j, e) in exps.iter().enumerate() {
            prow[j] = e / total;
        }
        let y = labels[r] as usize;
        // log p = (logit - max) - ln(sum exp)
        loss -= weight * ((row[y] - max) - total.ln()) * inv_n;
        let grow = grad.row_mut(r);
        for j in 0..classes {
            let onehot = if j == y { 1.0 } else { 0.0 };
            grow[j] = weight * (probs.at2(r, j) - onehot) * inv_n;
        }
    }
    SoftmaxXent { loss, probs, grad_logits: grad }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_logits_split_evenly() {
        let logits = Tensor::zeros(&[1, 2]);
        let out = softmax_xent(&logits, &[0], 1.0);
        assert_eq!(out.probs.data(), &[0.5, 0.5]);
        assert!((out.loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let logits = Tensor::from_vec(&[1, 2], vec![1000.0, 0.0]).unwrap();
        let out = softmax_xent(&logits, &[0], 1.0);
        assert!(out.loss.is_finite());
        assert!(out.loss < 1e-12);
        assert!((out.probs.at2(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one() {
        let logits =
            Tensor::from_vec(&[3, 2], vec![0.3, -1.2, 5.0, 4.5, -0.1, 0.1]).unwrap();
        let out = softmax_xent(&logits, &[1, 0, 1], 1.0);
        for r in 0..3 {
            let sum: f64 = out.probs.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(out.probs.row(r).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let base = vec![0.4, -0.3, 1.1, 0.9, -2.0, 0.5, 0.0, 0.25];
        let labels = [1u8, 0, 1, 0];
        let logits = Tensor::from_vec(&[4, 2], base.clone()).unwrap();
        let out = softmax_xent(&logits, &labels, 1.0);
        let h = 1e-6;
        for idx in 0..base.len() {
            let mut plus = base.clone();
            plus[idx] += h;
            let mut minus = base.clone();
            minus[idx] -= h;
            let lp = softmax_xent(&Tensor::from_vec(&[4, 2], plus).unwrap(), &labels, 1.0).loss;
            let lm = softmax_xent(&Tensor::from_vec(&[4, 2], minus).unwrap(), &labels, 1.0).loss;
            let numeric = (lp - lm) / (2.0 * h);
            assert!((out.grad_logits.data()[idx] - numeric).abs() < 1e-6);
        }
    }

    #[test]
    fn pos_weight_scales_fraud_rows() {
        let logits = Tensor::from_vec(&[2, 2], vec![0.2, -0.2, 0.2, -0.2]).unwrap();
        let unweighted = softmax_xent(&logits, &[1, 0], 1.0);
        let weighted = softmax_xent(&logits, &[1, 0], 2.0);
        // row 0 gradient doubles, row 1 unchanged
        for j in 0..2 {
            assert!((weighted.grad_logits.at2(0, j) - 2.0 * unweighted.grad_logits.at2(0, j)).abs() < 1e-15);
            assert!((weighted.grad_logits.at2(1, j) - unweighted.grad_logits.at2(1, j)).abs() < 1e-15);
        }
    }
}
