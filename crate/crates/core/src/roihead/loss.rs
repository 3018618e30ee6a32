use super::sample::RoiSample;
use crate::error::{Error, Result};
use crate::numcore::{smooth_l1, softmax_cross_entropy, Scalar, Tensor};
use crate::rpn::SMOOTH_L1_BETA;

#[derive(Clone, Debug)]
pub struct RcnnLoss<T> {
    pub cls: T,
    pub reg: T,
    pub d_scores: Tensor<T>,
    pub d_deltas: Tensor<T>,
}

impl<T: Scalar> RcnnLoss<T> {
    pub fn total(&self) -> T {
        self.cls + self.reg
    }
}

/// Per frame: mean cross-entropy over the frame's regions plus mean smooth-L1
/// over its foreground regions; both averaged over frames.
///
/// Rows of `scores`/`deltas` are the concatenation of `frames[0]`, `frames[1]`, ...
pub fn rcnn_loss<T: Scalar>(
    scores: &Tensor<T>,
    deltas: &Tensor<T>,
    frames: &[RoiSample],
) -> Result<RcnnLoss<T>> {
    let [r, c1] = scores.dims2("rcnn_loss")?;
    let total: usize = frames.iter().map(RoiSample::len).sum();
    if total != r || deltas.shape() != [r, 4] {
        return Err(Error::shape("rcnn_loss", scores.shape(), deltas.shape()));
    }
    if frames.is_empty() {
        return Err(Error::contract("rcnn_loss", "no frames"));
    }
    let inv_k = T::one() / T::of(frames.len() as f64);
    let mut d_scores = Tensor::zeros(scores.shape());
    let mut d_deltas = Tensor::zeros(deltas.shape());
    let (mut cls, mut reg) = (T::zero(), T::zero());
    let mut start = 0;
    for f in frames {
        let n = f.len();
        if n == 0 {
            continue;
        }
        let logits = Tensor::new(&[n, c1], scores.data()[start * c1..(start + n) * c1].to_vec())?;
        let ce = softmax_cross_entropy(&logits, &f.labels)?;
        cls += ce.loss;
        for (dst, &g) in d_scores.data_mut()[start * c1..(start + n) * c1]
            .iter_mut()
            .zip(ce.grad.data())
        {
            *dst = g * inv_k;
        }

        let fg: Vec<usize> = (0..n).filter(|&i| f.labels[i] != 0).collect();
        if !fg.is_empty() {
            let pred = Tensor::from_fn(&[fg.len(), 4], |e| {
                deltas.data()[(start + fg[e / 4]) * 4 + e % 4]
            });
            let target = Tensor::from_fn(&[fg.len(), 4], |e| T::of(f.targets[fg[e / 4]][e % 4]));
            let sl = smooth_l1(&pred, &target, T::of(SMOOTH_L1_BETA))?;
            reg += sl.loss;
            for (e, &g) in sl.grad.data().iter().enumerate() {
                d_deltas.data_mut()[(start + fg[e / 4]) * 4 + e % 4] = g * inv_k;
            }
        }
        start += n;
    }
    Ok(RcnnLoss {
        cls: cls * inv_k,
        reg: reg * inv_k,
        d_scores,
        d_deltas,
    })
}

/// Unweighted sum of the two stage losses.
pub fn total_loss<T: Scalar>(rpn: T, rcnn: T) -> Result<T> {
    if !rpn.is_finite() || !rcnn.is_finite() {
        return Err(Error::NonFinite(format!("rpn loss {rpn}, rcnn loss {rcnn}")));
    }
    Ok(rpn + rcnn)
}
