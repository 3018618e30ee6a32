use super::anchors::AnchorGrid;
use super::boxes::{decode_box, BBox, BoxSet};
use super::head::{AnchorLayout, RpnOutput};
use super::RpnConfig;
use crate::error::{Error, Result};
use crate::numcore::Scalar;
use crate::postprocess::nms;
use crate::Mode;

/// Decodes, clips, filters and suppresses one frame's anchors into scored proposals.
///
/// Scores are foreground softmax probabilities. Equal scores keep anchor order.
pub fn select_proposals<T: Scalar>(
    out: &RpnOutput<T>,
    frame: usize,
    grid: &AnchorGrid,
    image_w: f64,
    image_h: f64,
    cfg: &RpnConfig,
    mode: Mode,
) -> Result<BoxSet> {
    let [k, c2, hf, wf] = out.logits.dims4("select_proposals")?;
    let a = c2 / 2;
    if frame >= k || grid.len() != a * hf * wf {
        return Err(Error::contract(
            "select_proposals",
            format!(
                "frame {frame} of {k}, grid of {} anchors vs {} predicted",
                grid.len(),
                a * hf * wf
            ),
        ));
    }
    let layout = AnchorLayout { a, hf, wf };
    let logits = out.logits.data();
    let deltas = out.deltas.data();

    let mut cands: Vec<(usize, f64, BBox)> = Vec::with_capacity(grid.len());
    for (idx, anchor) in grid.boxes.iter().enumerate() {
        let bg = logits[layout.offset(frame, idx, 2, 0)].as_f64();
        let fg = logits[layout.offset(frame, idx, 2, 1)].as_f64();
        let score = 1.0 / (1.0 + (bg - fg).exp());
        let d = [0, 1, 2, 3].map(|c| deltas[layout.offset(frame, idx, 4, c)].as_f64());
        let b = decode_box(anchor, &d).clip(image_w, image_h);
        if b.width() >= cfg.min_size && b.height() >= cfg.min_size {
            cands.push((idx, score, b));
        }
    }
    // stable: ties stay in anchor order
    cands.sort_by(|x, y| y.1.total_cmp(&x.1));
    cands.truncate(cfg.pre_nms_top_n);

    let boxes: Vec<BBox> = cands.iter().map(|c| c.2).collect();
    let scores: Vec<f64> = cands.iter().map(|c| c.1).collect();
    let cap = match mode {
        Mode::Train => cfg.post_nms_train,
        Mode::Infer => cfg.post_nms_infer,
    };
    let keep = nms(&boxes, &scores, cfg.nms_iou);
    let kept: Vec<usize> = keep.into_iter().take(cap).collect();
    BoxSet::with_scores(
        kept.iter().map(|&i| boxes[i]).collect(),
        kept.iter().map(|&i| scores[i]).collect(),
    )
}
