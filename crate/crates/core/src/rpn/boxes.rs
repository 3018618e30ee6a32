use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest log-scale delta applied when decoding; keeps `exp` finite.
pub const MAX_LOG_DELTA: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Axis-aligned box in continuous pixel corner coordinates.
///
/// Area is `(x2 - x1) * (y2 - y1)`; there is no `+1` pixel convention anywhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x2 > self.x1 && self.y2 > self.y1 && [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    pub fn validate(&self, op: &'static str) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::contract(op, format!("degenerate box {self:?}")))
        }
    }

    /// Intersection over union; zero for disjoint or degenerate boxes.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = iw * ih;
        if inter <= 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Checked IoU: errors on a degenerate input box.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate("iou")?;
    b.validate("iou")?;
    Ok(a.iou(b))
}

/// Regression target of `target` relative to `anchor`:
/// `(dx / w_a, dy / h_a, ln(w / w_a), ln(h / h_a))` over box centres.
pub fn encode_box(anchor: &BBox, target: &BBox) -> Result<[f64; 4]> {
    anchor.validate("encode_box")?;
    target.validate("encode_box")?;
    let (ax, ay) = anchor.center();
    let (tx, ty) = target.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok([
        (tx - ax) / aw,
        (ty - ay) / ah,
        (target.width() / aw).ln(),
        (target.height() / ah).ln(),
    ])
}

/// Inverse of [`encode_box`]. Log-size deltas are clamped to [`MAX_LOG_DELTA`].
pub fn decode_box(anchor: &BBox, delta: &[f64; 4]) -> BBox {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = ax + delta[0] * aw;
    let cy = ay + delta[1] * ah;
    let w = aw * delta[2].min(MAX_LOG_DELTA).exp();
    let h = ah * delta[3].min(MAX_LOG_DELTA).exp();
    BBox::from_center(cx, cy, w, h)
}

/// Ordered boxes with optional per-box scores and class labels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub boxes: Vec<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

impl BoxSet {
    pub fn from_boxes(boxes: Vec<BBox>) -> Self {
        Self {
            boxes,
            scores: None,
            labels: None,
        }
    }

    pub fn with_scores(boxes: Vec<BBox>, scores: Vec<f64>) -> Result<Self> {
        if boxes.len() != scores.len() {
            return Err(Error::shape("BoxSet", &[boxes.len()], &[scores.len()]));
        }
        Ok(Self {
            boxes,
            scores: Some(scores),
            labels: None,
        })
    }

    pub fn with_labels(boxes: Vec<BBox>, labels: Vec<usize>) -> Result<Self> {
        if boxes.len() != labels.len() {
            return Err(Error::shape("BoxSet", &[boxes.len()], &[labels.len()]));
        }
        Ok(Self {
            boxes,
            scores: None,
            labels: Some(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels.as_ref().map_or(0, |l| l[i])
    }

    pub fn score(&self, i: usize) -> f64 {
        self.scores.as_ref().map_or(1.0, |s| s[i])
    }
}
