//! Stage one: anchors, anchor labelling, the proposal head, its loss and
//! proposal selection.

mod anchors;
mod boxes;
mod head;
mod loss;
mod proposals;

pub use anchors::{
    assign_anchors, generate_anchors, sample_anchors, AnchorGrid, AnchorLabel, AnchorLabels,
    AssignThresholds,
};
pub use boxes::{decode_box, encode_box, iou, BBox, BoxSet, MAX_LOG_DELTA};
pub use head::{RpnCache, RpnHead, RpnOutput};
pub use loss::{rpn_loss, RpnLoss, SMOOTH_L1_BETA};
pub use proposals::select_proposals;

#[derive(Clone, Debug, PartialEq)]
pub struct RpnConfig {
    /// Anchor side lengths in units of the feature stride.
    pub anchor_scales: Vec<f64>,
    /// Anchor width/height ratios at constant area.
    pub anchor_ratios: Vec<f64>,
    pub channels: usize,
    pub thresholds: AssignThresholds,
    pub sample_size: usize,
    pub pos_fraction: f64,
    pub pre_nms_top_n: usize,
    pub nms_iou: f64,
    pub post_nms_train: usize,
    pub post_nms_infer: usize,
    pub min_size: f64,
}

impl Default for RpnConfig {
    fn default() -> Self {
        Self {
            anchor_scales: vec![2.0, 4.0, 8.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            channels: 64,
            thresholds: AssignThresholds::default(),
            sample_size: 256,
            pos_fraction: 0.5,
            pre_nms_top_n: 2000,
            nms_iou: 0.7,
            post_nms_train: 256,
            post_nms_infer: 300,
            min_size: 1.0,
        }
    }
}

impl RpnConfig {
    pub fn anchors_per_location(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }
}
