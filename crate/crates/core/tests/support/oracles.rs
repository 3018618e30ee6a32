//! Independent reference computations shared by the metric tests.
#![allow(dead_code)]

use actdet::postprocess::Detection;
use actdet::rpn::{BBox, BoxSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn det(frame: usize, bbox: BBox, class_id: usize, score: f64) -> Detection {
    Detection { frame_index: frame, bbox, class_id, score }
}

/// Random box on a coarse grid so overlaps and exact IoU ties are common.
pub fn grid_box(rng: &mut impl Rng) -> BBox {
    let x = rng.gen_range(0..6) as f64 * 2.0;
    let y = rng.gen_range(0..6) as f64 * 2.0;
    let w = rng.gen_range(2..7) as f64 * 2.0;
    let h = rng.gen_range(2..7) as f64 * 2.0;
    BBox::new(x, y, x + w, y + h)
}

pub fn inter_over_union(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter)
}

/// True positives among the `k` highest-scoring detections of `class`,
/// matched from scratch.
pub fn true_positives_in_prefix(ranked: &[(usize, BBox)], gts: &[BoxSet], class: usize, k: usize) -> usize {
    let mut taken: Vec<Vec<usize>> = vec![Vec::new(); gts.len()];
    let mut hits = 0;
    for &(frame, b) in &ranked[..k] {
        let g = &gts[frame];
        let candidates = (0..g.len()).filter(|&j| g.labels.as_ref().unwrap()[j] == class && !taken[frame].contains(&j));
        let best = candidates
            .map(|j| (j, inter_over_union(&b, &g.boxes[j])))
            .filter(|&(_, v)| v >= 0.5)
            .fold(None, |acc: Option<(usize, f64)>, c| match acc {
                Some(a) if a.1 >= c.1 => Some(a),
                _ => Some(c),
            });
        if let Some((j, _)) = best {
            taken[frame].push(j);
            hits += 1;
        }
    }
    hits
}

/// AP from per-rank precision and recall: every true positive adds
/// `1 / num_gt` recall at the best precision reached at or after its rank.
pub fn brute_force_ap(dets: &[Vec<Detection>], gts: &[BoxSet], class: usize) -> (Option<f64>, Option<f64>) {
    let mut ranked: Vec<(f64, usize, BBox)> = dets
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| ds.iter().filter(|d| d.class_id == class).map(move |d| (d.score, f, d.bbox)))
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let ranked: Vec<(usize, BBox)> = ranked.into_iter().map(|(_, f, b)| (f, b)).collect();
    let num_gt: usize = gts
        .iter()
        .map(|g| g.labels.as_ref().unwrap().iter().filter(|&&l| l == class).count())
        .sum();
    if num_gt == 0 {
        let v = if ranked.is_empty() { None } else { Some(0.0) };
        return (v, v);
    }
    let n = ranked.len();
    let tp: Vec<usize> = (0..=n).map(|k| true_positives_in_prefix(&ranked, gts, class, k)).collect();
    let precision: Vec<f64> = (1..=n).map(|k| tp[k] as f64 / k as f64).collect();
    let recall: Vec<f64> = (1..=n).map(|k| tp[k] as f64 / num_gt as f64).collect();
    let best_from = |k: usize| precision[k..].iter().cloned().fold(0.0, f64::max);

    let mut all = 0.0;
    for k in 0..n {
        if tp[k + 1] > tp[k] {
            all += best_from(k) / num_gt as f64;
        }
    }
    let mut eleven = 0.0;
    for s in 0..=10 {
        let t = s as f64 / 10.0;
        let p = (0..n)
            .filter(|&k| recall[k] >= t - 1e-12)
            .map(|k| precision[k])
            .fold(0.0, f64::max);
        eleven += p / 11.0;
    }
    (Some(all), Some(eleven))
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<Detection>>, Vec<BoxSet>) {
    // at most three ground-truth boxes in total, spread over one or two frames
    let frames = rng.gen_range(1..=2);
    let total_gt = rng.gen_range(0..=3);
    let mut dets = vec![Vec::new(); frames];
    let gts: Vec<BoxSet> = (0..frames)
        .map(|f| {
            let n = if frames == 1 { total_gt } else if f == 0 { total_gt - total_gt / 2 } else { total_gt / 2 };
            let boxes: Vec<BBox> = (0..n).map(|_| grid_box(rng)).collect();
            let labels = (0..n).map(|_| if rng.gen_bool(0.8) { 1 } else { 2 }).collect();
            BoxSet::with_labels(boxes, labels).unwrap()
        })
        .collect();
    let nd = rng.gen_range(0..=6);
    for _ in 0..nd {
        let f = rng.gen_range(0..frames);
        let g = &gts[f];
        let b = if !g.is_empty() && rng.gen_bool(0.6) {
            // jitter a ground-truth box so matches are frequent
            let src = g.boxes[rng.gen_range(0..g.len())];
            let dx = rng.gen_range(-2..=2) as f64;
            BBox::new(src.x1 + dx, src.y1, src.x2 + dx, src.y2 + rng.gen_range(-2..=2) as f64)
        } else {
            grid_box(rng)
        };
        let class = if rng.gen_bool(0.85) { 1 } else { 2 };
        dets[f].push(det(f, b, class, rng.gen::<f64>()));
    }
    (dets, gts)
}

/// Twenty frames of one person; the first four contain a fall. Hand count:
/// TP frames 0-2, FN frame 3, FP frame 4, TN frames 5-19.
pub fn fall_scenario() -> (Vec<Vec<Detection>>, Vec<BoxSet>, Vec<String>) {
    let classes: Vec<String> = ["walk", "fall"].map(String::from).to_vec();
    let person = BBox::new(10.0, 10.0, 30.0, 40.0);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for f in 0..20 {
        let is_fall = f < 4;
        gts.push(BoxSet::with_labels(vec![person], vec![if is_fall { 2 } else { 1 }]).unwrap());
        let d = match f {
            // frames 0..3: the top detection says fall
            0..=2 => vec![det(f, person, 2, 0.9), det(f, person, 1, 0.3)],
            // frame 3: fall present but outscored, a miss
            3 => vec![det(f, person, 1, 0.8), det(f, person, 2, 0.7)],
            // frame 4: a false alarm
            4 => vec![det(f, person, 2, 0.6)],
            // frame 5: no detections at all, predicted not a fall
            5 => vec![],
            // frame 6: fall below the top detection does not count
            6 => vec![det(f, person, 1, 0.95), det(f, person, 2, 0.94)],
            _ => vec![det(f, person, 1, 0.9)],
        };
        dets.push(d);
    }
    (dets, gts, classes)
}
