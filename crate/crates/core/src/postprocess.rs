//! Final per-frame detections from the second-stage outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{softmax_in_place, Scalar, Tensor};
use crate::rpn::{decode_box, BBox};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Action class in `1..=C`; 0 is background and never emitted.
    pub class_id: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub max_per_frame: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            score_thresh: 0.05,
            nms_iou: 0.5,
            max_per_frame: 20,
        }
    }
}

impl DecodeConfig {
    /// Reads `decode.score_thresh`, `decode.nms_iou` and `decode.max_per_frame`.
    pub fn from_kv(kv: &crate::formats::KvConfig) -> Result<Self> {
        let d = Self::default();
        let c = Self {
            score_thresh: kv.get("decode.score_thresh", d.score_thresh)?,
            nms_iou: kv.get("decode.nms_iou", d.nms_iou)?,
            max_per_frame: kv.get("decode.max_per_frame", d.max_per_frame)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_thresh) {
            return Err(Error::config("decode.score_thresh", "must lie in [0, 1]"));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::config("decode.nms_iou", "must lie in (0, 1]"));
        }
        if self.max_per_frame == 0 {
            return Err(Error::config("decode.max_per_frame", "must be positive"));
        }
        Ok(())
    }
}

/// Greedy non-maximum suppression. Returns kept indices in descending score
/// order; equal scores are visited in index order. A box is suppressed when
/// its IoU with an already kept box exceeds `iou_thresh`.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_thresh: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "nms boxes/scores length");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && boxes[i].iou(&boxes[j]) > iou_thresh {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Softmax, background drop, per-class threshold and NMS, then a global top-k.
///
/// `scores` is `[R, C+1]`, `deltas` is `[R, 4]` (class-agnostic), one row per proposal.
pub fn decode_detections<T: Scalar>(
    frame_index: usize,
    scores: &Tensor<T>,
    deltas: &Tensor<T>,
    proposals: &[BBox],
    image_w: f64,
    image_h: f64,
    cfg: &DecodeConfig,
) -> Result<Vec<Detection>> {
    let [r, c1] = scores.dims2("decode_detections")?;
    if deltas.shape() != [r, 4] || proposals.len() != r {
        return Err(Error::shape("decode_detections", scores.shape(), deltas.shape()));
    }
    let mut probs: Vec<f64> = scores.data().iter().map(|v| v.as_f64()).collect();
    for row in probs.chunks_mut(c1) {
        softmax_in_place(row);
    }
    let boxes: Vec<BBox> = (0..r)
        .map(|i| {
            let d = [0, 1, 2, 3].map(|c| deltas.data()[i * 4 + c].as_f64());
            decode_box(&proposals[i], &d).clip(image_w, image_h)
        })
        .collect();

    let mut dets = Vec::new();
    for class in 1..c1 {
        let cand: Vec<usize> = (0..r)
            .filter(|&i| probs[i * c1 + class] >= cfg.score_thresh && boxes[i].is_valid())
            .collect();
        let cb: Vec<BBox> = cand.iter().map(|&i| boxes[i]).collect();
        let cs: Vec<f64> = cand.iter().map(|&i| probs[i * c1 + class]).collect();
        for k in nms(&cb, &cs, cfg.nms_iou) {
            dets.push(Detection {
                frame_index,
                bbox: cb[k],
                class_id: class,
                score: cs[k],
            });
        }
    }
    // stable sort keeps class order for equal scores
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(cfg.max_per_frame);
    Ok(dets)
}

/// Highest-scoring detection; on exact ties the earliest one wins.
pub fn top_detection(dets: &[Detection]) -> Option<&Detection> {
    dets.iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.score.total_cmp(&b.score).then(ib.cmp(ia)))
        .map(|(_, d)| d)
}
