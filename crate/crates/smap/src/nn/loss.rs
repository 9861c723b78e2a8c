//! Training losses: softmax cross entropy for classification, occupancy-
//! weighted binary cross entropy for reconstruction, and their combination.

use crate::scalar::{s, Scalar};

use super::{NnError, Tensor};

/// Output probabilities are clamped to this range inside the logs.
const BCE_CLAMP: f64 = 1e-7;

/// Softmax cross entropy against one-hot targets, averaged over the batch.
///
/// Returns the loss and its gradient with respect to the logits. The softmax
/// is stabilized by per-row max subtraction.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    one_hot: &Tensor<T>,
) -> Result<(T, Tensor<T>), NnError> {
    if logits.shape() != one_hot.shape() || logits.shape().len() != 2 {
        return Err(NnError::Shape {
            layer: "softmax_cross_entropy",
            expected: format!("matching (B,N), logits {:?}", logits.shape()),
            got: format!("{:?}", one_hot.shape()),
        });
    }
    let n = logits.shape()[1];
    let bsz = logits.shape()[0];
    let bf = T::from_usize(bsz).unwrap();
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = T::zero();
    for b in 0..bsz {
        let row = &logits.data()[b * n..][..n];
        let yrow = &one_hot.data()[b * n..][..n];
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &l in row {
            denom += (l - max).exp();
        }
        let log_denom = denom.ln();
        let grow = &mut grad.data_mut()[b * n..][..n];
        for i in 0..n {
            let log_p = row[i] - max - log_denom;
            let p = log_p.exp();
            loss -= yrow[i] * log_p;
            grow[i] = (p - yrow[i]) / bf;
        }
    }
    Ok((loss / bf, grad))
}

/// Softmax probabilities of a logit row; sums to one.
pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = row.iter().map(|&l| (l - max).exp()).collect();
    let denom: T = out.iter().cloned().sum();
    for v in out.iter_mut() {
        *v /= denom;
    }
    out
}

/// Occupancy-weighted binary cross entropy summed over the grid, averaged
/// over the batch:
/// `-sum(gamma * t * log(o) + (1 - gamma) * (1 - t) * log(1 - o))`.
///
/// `gamma` trades false negatives against false positives; targets must be
/// exactly binary. Outputs are clamped to `[1e-7, 1 - 1e-7]` inside the logs.
/// Returns the loss and its gradient with respect to `output`.
pub fn weighted_bce<T: Scalar>(
    output: &Tensor<T>,
    target: &Tensor<T>,
    gamma: T,
) -> Result<(T, Tensor<T>), NnError> {
    if output.shape() != target.shape() {
        return Err(NnError::Shape {
            layer: "weighted_bce",
            expected: format!("{:?}", output.shape()),
            got: format!("{:?}", target.shape()),
        });
    }
    let lo = s::<T>(BCE_CLAMP);
    let hi = T::one() - lo;
    let one = T::one();
    let bsz = output.batch().max(1);
    let bf = T::from_usize(bsz).unwrap();
    let mut grad = Tensor::zeros(output.shape());
    let mut loss = T::zero();
    for ((&o, &t), g) in output
        .data()
        .iter()
        .zip(target.data().iter())
        .zip(grad.data_mut().iter_mut())
    {
        if t != T::zero() && t != one {
            return Err(NnError::NonBinaryTarget);
        }
        let oc = o.max(lo).min(hi);
        loss -= gamma * t * oc.ln() + (one - gamma) * (one - t) * (one - oc).ln();
        *g = -(gamma * t / oc - (one - gamma) * (one - t) / (one - oc)) / bf;
    }
    Ok((loss / bf, grad))
}

/// Combined training objective: `L = Lc + alpha * Lr`.
pub fn combined<T: Scalar>(classification: T, reconstruction: T, alpha: T) -> T {
    classification + alpha * reconstruction
}
