//! Detection and classification metrics: VOC-style matching, PR-curve AP,
//! frame mAP, the IoU-gated confusion matrix and the fall-detection rates.

use serde::{Deserialize, Serialize};

use crate::postprocess::{top_detection, Detection};
use crate::rpn::BoxSet;

pub const REPORT_SCHEMA: u32 = 1;
pub const FALL_CLASS: &str = "fall";

/// How the area under the precision/recall curve is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// Every recall step, with the monotone precision envelope.
    #[default]
    AllPoints,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub iou_thresh: f64,
    pub ap_mode: ApMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresh: 0.5,
            ap_mode: ApMode::AllPoints,
        }
    }
}

impl std::str::FromStr for ApMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all-points" => Ok(ApMode::AllPoints),
            "eleven-point" => Ok(ApMode::ElevenPoint),
            _ => Err(format!("unknown AP mode `{s}` (all-points, eleven-point)")),
        }
    }
}

impl EvalConfig {
    /// Reads `eval.iou_thresh` and `eval.ap_mode`.
    pub fn from_kv(kv: &crate::formats::KvConfig) -> crate::Result<Self> {
        let d = Self::default();
        let c = Self {
            iou_thresh: kv.get("eval.iou_thresh", d.iou_thresh)?,
            ap_mode: kv.get("eval.ap_mode", d.ap_mode)?,
        };
        if !(c.iou_thresh > 0.0 && c.iou_thresh <= 1.0) {
            return Err(crate::Error::Config {
                field: "eval.iou_thresh".into(),
                detail: "must lie in (0, 1]".into(),
            });
        }
        Ok(c)
    }
}

/// Detections of one class across all frames, in descending score order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassMatches {
    pub scores: Vec<f64>,
    pub tp: Vec<bool>,
    pub num_gt: usize,
}

/// Greedy matching for one class. `dets[f]` and `gts[f]` belong to frame `f`.
///
/// Detections are visited by descending score (ties in frame, then list
/// order). Each takes the unmatched same-frame ground truth of the class with
/// the highest IoU, provided that IoU reaches `iou_thresh`; otherwise it is a
/// false positive.
pub fn match_detections(dets: &[Vec<Detection>], gts: &[BoxSet], class: usize, iou_thresh: f64) -> ClassMatches {
    assert_eq!(dets.len(), gts.len(), "one detection list per ground-truth frame");
    let mut order: Vec<(usize, usize)> = dets
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| {
            ds.iter()
                .enumerate()
                .filter(|(_, d)| d.class_id == class)
                .map(move |(i, _)| (f, i))
        })
        .collect();
    order.sort_by(|a, b| dets[b.0][b.1].score.total_cmp(&dets[a.0][a.1].score));

    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let num_gt = gts
        .iter()
        .map(|g| (0..g.len()).filter(|&i| g.label(i) == class).count())
        .sum();
    let mut out = ClassMatches {
        scores: Vec::with_capacity(order.len()),
        tp: Vec::with_capacity(order.len()),
        num_gt,
    };
    for (f, i) in order {
        let d = &dets[f][i];
        let g = &gts[f];
        let mut best: Option<(usize, f64)> = None;
        for j in 0..g.len() {
            if g.label(j) != class || used[f][j] {
                continue;
            }
            let v = d.bbox.iou(&g.boxes[j]);
            if v >= iou_thresh && best.map_or(true, |(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            used[f][j] = true;
        }
        out.scores.push(d.score);
        out.tp.push(best.is_some());
    }
    out
}

/// `(recall, precision)` after each detection in score order.
pub fn pr_curve(tp: &[bool], num_gt: usize) -> Vec<(f64, f64)> {
    let mut hits = 0usize;
    tp.iter()
        .enumerate()
        .map(|(k, &t)| {
            hits += t as usize;
            let recall = if num_gt == 0 { 0.0 } else { hits as f64 / num_gt as f64 };
            (recall, hits as f64 / (k + 1) as f64)
        })
        .collect()
}

/// Area under the PR curve of score-ordered TP/FP flags. `None` when the
/// class has neither ground truth nor detections (it takes no part in mAP);
/// detections without any ground truth score 0.
pub fn average_precision(tp: &[bool], num_gt: usize, mode: ApMode) -> Option<f64> {
    if num_gt == 0 {
        return if tp.is_empty() { None } else { Some(0.0) };
    }
    let curve = pr_curve(tp, num_gt);
    // envelope: best precision at this recall or beyond
    let mut env = vec![0.0; curve.len()];
    let mut run: f64 = 0.0;
    for k in (0..curve.len()).rev() {
        run = run.max(curve[k].1);
        env[k] = run;
    }
    Some(match mode {
        ApMode::AllPoints => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (k, &(r, _)) in curve.iter().enumerate() {
                if r > prev_recall {
                    ap += (r - prev_recall) * env[k];
                    prev_recall = r;
                }
            }
            ap
        }
        ApMode::ElevenPoint => {
            let mut sum = 0.0;
            for step in 0..=10 {
                let t = step as f64 / 10.0;
                let p = curve
                    .iter()
                    .zip(&env)
                    .find(|((r, _), _)| *r >= t - 1e-12)
                    .map_or(0.0, |(_, &e)| e);
                sum += p;
            }
            sum / 11.0
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub num_gt: usize,
    pub num_det: usize,
    pub ap: Option<f64>,
    /// `(recall, precision)` per detection in score order.
    pub pr_curve: Vec<(f64, f64)>,
}

/// Per-class APs and their mean over the classes that take part.
pub fn frame_map(dets: &[Vec<Detection>], gts: &[BoxSet], classes: &[String], cfg: &EvalConfig) -> (Vec<ClassReport>, f64) {
    let reports: Vec<ClassReport> = classes
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let m = match_detections(dets, gts, i + 1, cfg.iou_thresh);
            ClassReport {
                class: name.clone(),
                num_gt: m.num_gt,
                num_det: m.tp.len(),
                ap: average_precision(&m.tp, m.num_gt, cfg.ap_mode),
                pr_curve: pr_curve(&m.tp, m.num_gt),
            }
        })
        .collect();
    let aps: Vec<f64> = reports.iter().filter_map(|r| r.ap).collect();
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    (reports, map)
}

/// `C x (C + 1)` counts: row = ground-truth class, column = predicted class,
/// last column = missed.
///
/// Each ground-truth box looks at the detections of its frame whose IoU with
/// it exceeds `iou_thresh` (strictly) and takes the highest-scoring one.
/// With none, the box counts in the last column.
pub fn confusion_matrix(dets: &[Vec<Detection>], gts: &[BoxSet], num_classes: usize, iou_thresh: f64) -> Vec<Vec<usize>> {
    assert_eq!(dets.len(), gts.len(), "one detection list per ground-truth frame");
    let mut m = vec![vec![0usize; num_classes + 1]; num_classes];
    for (ds, g) in dets.iter().zip(gts) {
        for j in 0..g.len() {
            let row = g.label(j);
            if row == 0 || row > num_classes {
                continue;
            }
            let best = ds
                .iter()
                .filter(|d| d.bbox.iou(&g.boxes[j]) > iou_thresh)
                .fold(None::<&Detection>, |acc, d| match acc {
                    Some(a) if a.score >= d.score => Some(a),
                    _ => Some(d),
                });
            let col = best.map_or(num_classes, |d| d.class_id - 1);
            m[row - 1][col] += 1;
        }
    }
    m
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FallMetrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Percentages; absent when the denominator is zero.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64 * 100.0)
}

impl FallMetrics {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        Self {
            tp,
            tn,
            fp,
            fn_,
            sensitivity: pct(tp, tp + fn_),
            specificity: pct(tn, tn + fp),
            accuracy: pct(tp + tn, tp + tn + fp + fn_),
        }
    }
}

/// Frame-level fall rates from predicted and true fall flags.
pub fn fall_metrics(predicted: &[bool], actual: &[bool]) -> FallMetrics {
    assert_eq!(predicted.len(), actual.len(), "one prediction per frame");
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (a, p) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
        }
    }
    FallMetrics::from_counts(tp, tn, fp, fn_)
}

/// Fall flags under the highest-confidence protocol: a frame is predicted to
/// show a fall when its top detection has class `fall_id`; a frame without
/// detections is predicted not to.
pub fn fall_flags(dets: &[Vec<Detection>], gts: &[BoxSet], fall_id: usize) -> (Vec<bool>, Vec<bool>) {
    let predicted = dets
        .iter()
        .map(|d| top_detection(d).is_some_and(|t| t.class_id == fall_id))
        .collect();
    let actual = gts
        .iter()
        .map(|g| (0..g.len()).any(|j| g.label(j) == fall_id))
        .collect();
    (predicted, actual)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: u32,
    pub classes: Vec<String>,
    pub iou_thresh: f64,
    pub ap_mode: ApMode,
    pub num_frames: usize,
    pub num_detections: usize,
    pub per_class: Vec<ClassReport>,
    pub map: f64,
    pub confusion: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fall: Option<FallMetrics>,
}

impl MetricsReport {
    pub fn ap(&self, class: &str) -> Option<f64> {
        self.per_class.iter().find(|c| c.class == class).and_then(|c| c.ap)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "frames: {}  detections: {}", self.num_frames, self.num_detections);
        let _ = writeln!(s, "frame mAP@{}: {:.4}", self.iou_thresh, self.map);
        for c in &self.per_class {
            let ap = c.ap.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(s, "  AP {:<12} {ap:>7}  (gt {}, det {})", c.class, c.num_gt, c.num_det);
        }
        let _ = writeln!(s, "confusion (rows: truth; cols: predicted, missed):");
        let width = self.classes.iter().map(String::len).max().unwrap_or(4).max(6);
        let _ = write!(s, "  {:<width$}", "");
        for c in self.classes.iter().chain(std::iter::once(&"missed".to_string())) {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.confusion) {
            let _ = write!(s, "  {name:<width$}");
            for v in row {
                let _ = write!(s, " {v:>width$}");
            }
            s.push('\n');
        }
        if let Some(f) = &self.fall {
            let p = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(
                s,
                "fall: TP {} TN {} FP {} FN {}  sensitivity {}  specificity {}  accuracy {}",
                f.tp,
                f.tn,
                f.fp,
                f.fn_,
                p(f.sensitivity),
                p(f.specificity),
                p(f.accuracy)
            );
        }
        s
    }
}

/// Full report over per-frame detections and labelled ground truth.
pub fn evaluate_detections(dets: &[Vec<Detection>], gts: &[BoxSet], classes: &[String], cfg: &EvalConfig) -> MetricsReport {
    let (per_class, map) = frame_map(dets, gts, classes, cfg);
    let confusion = confusion_matrix(dets, gts, classes.len(), cfg.iou_thresh);
    let fall = classes.iter().position(|c| c == FALL_CLASS).map(|i| {
        let (p, a) = fall_flags(dets, gts, i + 1);
        fall_metrics(&p, &a)
    });
    MetricsReport {
        schema: REPORT_SCHEMA,
        classes: classes.to_vec(),
        iou_thresh: cfg.iou_thresh,
        ap_mode: cfg.ap_mode,
        num_frames: gts.len(),
        num_detections: dets.iter().map(Vec::len).sum(),
        per_class,
        map,
        confusion,
        fall,
    }
}
