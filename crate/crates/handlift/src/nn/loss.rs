//! Loss functions with analytic gradients.

use super::tensor::Scalar;
use super::NnError;

/// Mean softmax cross-entropy over a batch of logits (`[n, classes]`
/// row-major). Returns the scalar loss and `d loss / d logits`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &[T],
    n: usize,
    classes: usize,
    labels: &[usize],
) -> Result<(T, Vec<T>), NnError> {
    if logits.len() != n * classes || labels.len() != n {
        return Err(NnError::ShapeMismatch(format!(
            "logits {} / labels {} inconsistent with {n}x{classes}",
            logits.len(),
            labels.len()
        )));
    }
    for &label in labels {
        if label >= classes {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
    }

    let inv_n = T::from_f64(1.0 / n as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for (row, &label) in labels.iter().enumerate() {
        let x = &logits[row * classes..(row + 1) * classes];
        let max = x.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &v in x {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln() + max;
        loss += log_denom - x[label];
        let g = &mut grad[row * classes..(row + 1) * classes];
        for (gi, &v) in g.iter_mut().zip(x) {
            *gi = (v - log_denom).exp() * inv_n;
        }
        g[label] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Squared L2 loss: sum of squared differences, gradient `2 (pred - target)`.
pub fn l2_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>), NnError> {
    if pred.len() != target.len() {
        return Err(NnError::ShapeMismatch(format!(
            "l2 operands differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let mut loss = T::zero();
    let two = T::from_f64(2.0);
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            two * d
        })
        .collect();
    Ok((loss, grad))
}
