use rand::seq::SliceRandom;
use rand::Rng;

use super::RoiConfig;
use crate::error::Result;
use crate::rpn::{encode_box, BBox};

/// Training regions for one frame: foreground first, then background.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoiSample {
    pub rois: Vec<BBox>,
    /// Matched ground-truth class for foreground, 0 for background.
    pub labels: Vec<usize>,
    /// Encoded regression target; all zero (and unused) for background.
    pub targets: Vec<[f64; 4]>,
}

impl RoiSample {
    pub fn len(&self) -> usize {
        self.rois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rois.is_empty()
    }

    pub fn foreground(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Labels proposals against ground truth and draws a fixed-size mix of
/// foreground (IoU >= `fg_iou`) and background (IoU < `bg_iou`) regions.
/// Ground-truth boxes join the candidate pool, so any frame with ground truth
/// yields foreground.
pub fn sample_rois<R: Rng>(
    proposals: &[BBox],
    gt: &[BBox],
    gt_labels: &[usize],
    cfg: &RoiConfig,
    rng: &mut R,
) -> Result<RoiSample> {
    let pool: Vec<BBox> = proposals
        .iter()
        .chain(gt)
        .copied()
        .filter(BBox::is_valid)
        .collect();
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut matched = vec![0usize; pool.len()];
    for (i, b) in pool.iter().enumerate() {
        let mut best = 0.0;
        for (g, gb) in gt.iter().enumerate() {
            let v = b.iou(gb);
            if v > best {
                best = v;
                matched[i] = g;
            }
        }
        if !gt.is_empty() && best >= cfg.fg_iou {
            fg.push(i);
        } else if best < cfg.bg_iou {
            bg.push(i);
        }
    }
    let fg_cap = (cfg.batch_per_frame as f64 * cfg.fg_fraction).round() as usize;
    if fg.len() > fg_cap {
        fg.shuffle(rng);
        fg.truncate(fg_cap);
        fg.sort_unstable();
    }
    let bg_cap = cfg.batch_per_frame - fg.len();
    if bg.len() > bg_cap {
        bg.shuffle(rng);
        bg.truncate(bg_cap);
        bg.sort_unstable();
    }

    let mut out = RoiSample::default();
    for &i in &fg {
        let g = matched[i];
        out.rois.push(pool[i]);
        out.labels.push(gt_labels[g]);
        out.targets.push(encode_box(&pool[i], &gt[g])?);
    }
    for &i in &bg {
        out.rois.push(pool[i]);
        out.labels.push(0);
        out.targets.push([0.0; 4]);
    }
    Ok(out)
}
