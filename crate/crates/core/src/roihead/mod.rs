//! Stage two: region pooling, action classification, class-agnostic box
//! refinement, and the second-stage and total losses.

mod align;
mod head;
mod loss;
mod sample;

pub use align::{roi_align, roi_align_backward, Roi, RoiAlignConfig};
pub use head::{RcnnCache, RcnnHead};
pub use loss::{rcnn_loss, total_loss, RcnnLoss};
pub use sample::{sample_rois, RoiSample};

#[derive(Clone, Debug, PartialEq)]
pub struct RoiConfig {
    pub output_size: usize,
    pub sampling_ratio: usize,
    pub hidden: usize,
    pub batch_per_frame: usize,
    pub fg_fraction: f64,
    pub fg_iou: f64,
    pub bg_iou: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            output_size: 7,
            sampling_ratio: 2,
            hidden: 256,
            batch_per_frame: 64,
            fg_fraction: 0.25,
            fg_iou: 0.5,
            bg_iou: 0.5,
        }
    }
}
