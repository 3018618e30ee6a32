use super::anchors::{AnchorLabel, AnchorLabels};
use super::head::{AnchorLayout, RpnOutput};
use crate::error::{Error, Result};
use crate::numcore::{smooth_l1, softmax_cross_entropy, Scalar, Tensor};

pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Loss parts and gradients for the objectness and delta maps.
#[derive(Clone, Debug)]
pub struct RpnLoss<T> {
    pub cls: T,
    pub reg: T,
    pub d_logits: Tensor<T>,
    pub d_deltas: Tensor<T>,
}

impl<T: Scalar> RpnLoss<T> {
    pub fn total(&self) -> T {
        self.cls + self.reg
    }
}

/// Per frame: mean cross-entropy over the sampled anchors plus mean smooth-L1
/// over the sampled positives; both averaged over the frames.
///
/// `samples[k]` lists the anchor indices drawn for frame `k`. Ignored anchors
/// never contribute, and the regression term vanishes for a frame without
/// sampled positives.
pub fn rpn_loss<T: Scalar>(
    out: &RpnOutput<T>,
    labels: &[AnchorLabels],
    samples: &[Vec<usize>],
) -> Result<RpnLoss<T>> {
    let [k, c2, hf, wf] = out.logits.dims4("rpn_loss")?;
    let a = c2 / 2;
    if out.deltas.shape() != [k, 4 * a, hf, wf] {
        return Err(Error::shape("rpn_loss", out.logits.shape(), out.deltas.shape()));
    }
    if labels.len() != k || samples.len() != k {
        return Err(Error::contract(
            "rpn_loss",
            format!("{k} frames but {} label sets / {} samples", labels.len(), samples.len()),
        ));
    }
    let layout = AnchorLayout { a, hf, wf };
    let inv_k = T::one() / T::of(k as f64);
    let mut d_logits = Tensor::zeros(out.logits.shape());
    let mut d_deltas = Tensor::zeros(out.deltas.shape());
    let (mut cls_sum, mut reg_sum) = (T::zero(), T::zero());

    for frame in 0..k {
        let lab = &labels[frame];
        let picked: Vec<usize> = samples[frame]
            .iter()
            .copied()
            .filter(|&i| lab.labels[i] != AnchorLabel::Ignore)
            .collect();
        if picked.is_empty() {
            continue;
        }
        let gathered = Tensor::from_fn(&[picked.len(), 2], |e| {
            out.logits.data()[layout.offset(frame, picked[e / 2], 2, e % 2)]
        });
        let targets: Vec<usize> = picked
            .iter()
            .map(|&i| usize::from(lab.labels[i] == AnchorLabel::Positive))
            .collect();
        let ce = softmax_cross_entropy(&gathered, &targets)?;
        cls_sum += ce.loss;
        for (e, &g) in ce.grad.data().iter().enumerate() {
            d_logits.data_mut()[layout.offset(frame, picked[e / 2], 2, e % 2)] += g * inv_k;
        }

        let pos: Vec<usize> = picked
            .iter()
            .copied()
            .filter(|&i| lab.labels[i] == AnchorLabel::Positive)
            .collect();
        if pos.is_empty() {
            continue;
        }
        let pred = Tensor::from_fn(&[pos.len(), 4], |e| {
            out.deltas.data()[layout.offset(frame, pos[e / 4], 4, e % 4)]
        });
        let target = Tensor::from_fn(&[pos.len(), 4], |e| T::of(lab.targets[pos[e / 4]][e % 4]));
        let sl = smooth_l1(&pred, &target, T::of(SMOOTH_L1_BETA))?;
        reg_sum += sl.loss;
        for (e, &g) in sl.grad.data().iter().enumerate() {
            d_deltas.data_mut()[layout.offset(frame, pos[e / 4], 4, e % 4)] += g * inv_k;
        }
    }
    Ok(RpnLoss {
        cls: cls_sum * inv_k,
        reg: reg_sum * inv_k,
        d_logits,
        d_deltas,
    })
}
