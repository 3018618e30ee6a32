use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Scalar loss value with its gradient with respect to the prediction.
#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad: Tensor<T>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, c] = logits.dims2("softmax")?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Mean over rows of `-log softmax(logits)[target]`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<LossGrad<T>> {
    let [n, c] = logits.dims2("softmax_cross_entropy")?;
    if targets.len() != n {
        return Err(Error::shape("softmax_cross_entropy", &[n], &[targets.len()]));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::contract(
            "softmax_cross_entropy",
            format!("target {bad} out of range for {c} classes"),
        ));
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut loss = T::zero();
    let mut grad = logits.clone();
    for (row, &t) in grad.data_mut().chunks_mut(c).zip(targets) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += lse - row[t];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_n;
        }
        row[t] -= inv_n;
    }
    Ok(LossGrad {
        loss: loss * inv_n,
        grad,
    })
}

/// Huber-style loss: `0.5 d^2 / beta` inside `|d| < beta`, `|d| - 0.5 beta` outside,
/// averaged over all elements.
pub fn smooth_l1<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, beta: T) -> Result<LossGrad<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("smooth_l1", pred.shape(), target.shape()));
    }
    if !(beta > T::zero()) {
        return Err(Error::contract("smooth_l1", "beta must be positive"));
    }
    let inv_n = T::one() / T::of(pred.len() as f64);
    let half = T::of(0.5);
    let mut loss = T::zero();
    let grad = Tensor::from_fn(pred.shape(), |i| {
        let d = pred.data()[i] - target.data()[i];
        if d.abs() < beta {
            loss += half * d * d / beta;
            d / beta * inv_n
        } else {
            loss += d.abs() - half * beta;
            d.signum() * inv_n
        }
    });
    Ok(LossGrad {
        loss: loss * inv_n,
        grad,
    })
}
