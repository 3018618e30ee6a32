use rand::seq::SliceRandom;
use rand::Rng;

use super::boxes::{encode_box, BBox};
use crate::error::{Error, Result};

/// Anchors tiled over a feature grid, index `(i * wf + j) * A + a` with
/// `a = scale_index * ratios.len() + ratio_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub boxes: Vec<BBox>,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
}

impl AnchorGrid {
    pub fn per_location(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// One anchor per (scale, ratio) at every cell centre. An anchor has area
/// `(scale * stride)^2` and width/height equal to `ratio`.
pub fn generate_anchors(
    height: usize,
    width: usize,
    stride: usize,
    scales: &[f64],
    ratios: &[f64],
) -> Result<AnchorGrid> {
    if height == 0 || width == 0 || stride == 0 {
        return Err(Error::contract(
            "generate_anchors",
            format!("non-positive grid {height}x{width} stride {stride}"),
        ));
    }
    if scales.is_empty() || ratios.is_empty() {
        return Err(Error::contract("generate_anchors", "empty scales or ratios"));
    }
    if scales.iter().chain(ratios).any(|&v| !(v > 0.0)) {
        return Err(Error::contract("generate_anchors", "scales and ratios must be positive"));
    }
    let s = stride as f64;
    let shapes: Vec<(f64, f64)> = scales
        .iter()
        .flat_map(|&sc| {
            ratios.iter().map(move |&r| {
                let side = sc * s;
                (side * r.sqrt(), side / r.sqrt())
            })
        })
        .collect();
    let mut boxes = Vec::with_capacity(height * width * shapes.len());
    for i in 0..height {
        for j in 0..width {
            let (cx, cy) = ((j as f64 + 0.5) * s, (i as f64 + 0.5) * s);
            boxes.extend(shapes.iter().map(|&(w, h)| BBox::from_center(cx, cy, w, h)));
        }
    }
    Ok(AnchorGrid {
        boxes,
        scales: scales.to_vec(),
        ratios: ratios.to_vec(),
        stride,
        height,
        width,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssignThresholds {
    pub positive_iou: f64,
    pub negative_iou: f64,
}

impl Default for AssignThresholds {
    fn default() -> Self {
        Self {
            positive_iou: 0.7,
            negative_iou: 0.3,
        }
    }
}

/// Anchor labels with the matched ground truth and regression target of each positive.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorLabels {
    pub labels: Vec<AnchorLabel>,
    pub matched: Vec<Option<usize>>,
    pub targets: Vec<[f64; 4]>,
}

impl AnchorLabels {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices(AnchorLabel::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices(AnchorLabel::Negative)
    }

    fn indices(&self, which: AnchorLabel) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == which)
            .map(|(i, _)| i)
    }
}

const ARGMAX_TIE: f64 = 1e-9;

/// Labels anchors against ground truth.
///
/// Positive: the highest-IoU anchor(s) of some ground-truth box, or IoU above
/// `positive_iou` with any box. Negative: not positive and IoU below
/// `negative_iou` with every box. Everything else is ignored.
pub fn assign_anchors(grid: &AnchorGrid, gt: &[BBox], th: AssignThresholds) -> AnchorLabels {
    let n = grid.len();
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt = vec![0usize; n];
    let mut gt_best = vec![0.0f64; gt.len()];
    for (a, anchor) in grid.boxes.iter().enumerate() {
        for (g, gbox) in gt.iter().enumerate() {
            let v = anchor.iou(gbox);
            if v > best_iou[a] {
                best_iou[a] = v;
                best_gt[a] = g;
            }
            gt_best[g] = gt_best[g].max(v);
        }
    }

    let mut labels: Vec<AnchorLabel> = best_iou
        .iter()
        .map(|&v| {
            if v > th.positive_iou {
                AnchorLabel::Positive
            } else if v < th.negative_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();

    for (a, anchor) in grid.boxes.iter().enumerate() {
        let is_argmax = gt
            .iter()
            .zip(&gt_best)
            .any(|(gbox, &best)| best > 0.0 && anchor.iou(gbox) >= best - ARGMAX_TIE);
        if is_argmax {
            labels[a] = AnchorLabel::Positive;
        }
    }

    let matched: Vec<Option<usize>> = (0..n)
        .map(|a| (labels[a] == AnchorLabel::Positive).then_some(best_gt[a]))
        .collect();
    let targets = matched
        .iter()
        .enumerate()
        .map(|(a, m)| match m {
            Some(g) => encode_box(&grid.boxes[a], &gt[*g]).unwrap_or([0.0; 4]),
            None => [0.0; 4],
        })
        .collect();
    AnchorLabels {
        labels,
        matched,
        targets,
    }
}

/// Draws at most `sample_size` anchors, no more than `pos_fraction` of them
/// positive. Returned indices are sorted.
pub fn sample_anchors<R: Rng>(
    labels: &AnchorLabels,
    sample_size: usize,
    pos_fraction: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut pos: Vec<usize> = labels.positives().collect();
    let mut neg: Vec<usize> = labels.negatives().collect();
    let max_pos = (sample_size as f64 * pos_fraction).floor() as usize;
    if pos.len() > max_pos {
        pos.shuffle(rng);
        pos.truncate(max_pos);
    }
    let max_neg = sample_size - pos.len();
    if neg.len() > max_neg {
        neg.shuffle(rng);
        neg.truncate(max_neg);
    }
    let mut out: Vec<usize> = pos.into_iter().chain(neg).collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_anchor_geometry() {
        let g = generate_anchors(1, 1, 8, &[1.0], &[1.0]).unwrap();
        assert_eq!(g.boxes, vec![BBox::new(0.0, 0.0, 8.0, 8.0)]);
        assert_eq!(g.boxes[0].center(), (4.0, 4.0));
    }

    #[test]
    fn ratio_preserves_area() {
        let g = generate_anchors(1, 1, 8, &[2.0], &[2.0]).unwrap();
        let b = g.boxes[0];
        assert!((b.width() - 2.0 * b.height()).abs() < 1e-9);
        assert!((b.area() - 256.0).abs() < 1e-6);
    }

    #[test]
    fn anchor_count() {
        let g = generate_anchors(2, 2, 8, &[2.0, 4.0, 8.0], &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(g.len(), 4 * 9);
        assert_eq!(g.per_location(), 9);
    }

    fn grid_of(boxes: Vec<BBox>) -> AnchorGrid {
        AnchorGrid {
            boxes,
            scales: vec![1.0],
            ratios: vec![1.0],
            stride: 8,
            height: 1,
            width: 1,
        }
    }

    #[test]
    fn thresholds_and_argmax_rule() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        let grid = grid_of(vec![
            BBox::new(0.0, 0.0, 10.0, 8.0),   // IoU 0.8
            BBox::new(0.0, 0.0, 10.0, 5.0),   // IoU 0.5
            BBox::new(50.0, 50.0, 60.0, 60.0), // IoU 0
        ]);
        let l = assign_anchors(&grid, &[gt], AssignThresholds::default());
        assert_eq!(
            l.labels,
            vec![AnchorLabel::Positive, AnchorLabel::Ignore, AnchorLabel::Negative]
        );

        let grid = grid_of(vec![
            BBox::new(0.0, 0.0, 10.0, 6.0), // IoU 0.6, best
            BBox::new(0.0, 0.0, 10.0, 5.0), // IoU 0.5
        ]);
        let l = assign_anchors(&grid, &[gt], AssignThresholds::default());
        assert_eq!(l.labels, vec![AnchorLabel::Positive, AnchorLabel::Ignore]);
        assert_eq!(l.matched[0], Some(0));
    }

    #[test]
    fn empty_gt_all_negative() {
        let grid = generate_anchors(2, 2, 8, &[1.0], &[1.0]).unwrap();
        let l = assign_anchors(&grid, &[], AssignThresholds::default());
        assert!(l.labels.iter().all(|&x| x == AnchorLabel::Negative));
    }

    #[test]
    fn sampling_caps_positives() {
        let labels = AnchorLabels {
            labels: (0..100)
                .map(|i| if i < 60 { AnchorLabel::Positive } else { AnchorLabel::Negative })
                .collect(),
            matched: vec![None; 100],
            targets: vec![[0.0; 4]; 100],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sample_anchors(&labels, 32, 0.5, &mut rng);
        assert_eq!(s.len(), 32);
        assert_eq!(s.iter().filter(|&&i| i < 60).count(), 16);
    }
}
