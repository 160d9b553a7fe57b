//! Small numeric kernels shared by the loss and selection code.

use ndarray::{Array2, ArrayView1, Axis};

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Row-wise softmax of a `batch x classes` logit matrix.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let p = softmax(row.as_slice().expect("row-major logits"));
        row.iter_mut().zip(p).for_each(|(o, v)| *o = v);
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

pub fn argmax_view(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// Standard cross-entropy `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    -log_softmax(logits)[label]
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), num_classes));
    for (i, &y) in labels.iter().enumerate() {
        out[[i, y]] = 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_and_survives_large_logits() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.3, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let ce = cross_entropy(&[0.2; 10], 3);
        assert!((ce - 10f64.ln()).abs() < 1e-12);
    }
}
