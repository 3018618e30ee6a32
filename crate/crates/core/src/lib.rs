//! Video action detection with temporal channel shifting: a two-stage
//! region detector over clips, its training loop, evaluation metrics and a
//! synthetic clip generator.

pub mod backbone;
pub mod error;
pub mod evalsuite;
pub mod formats;
pub mod layers;
pub mod model;
pub mod numcore;
pub mod postprocess;
pub mod roihead;
pub mod rpn;
pub mod selfcheck;
pub mod synthvid;
pub mod trainer;
pub mod tshift;

pub use error::{Error, Result};

/// Training vs. inference behaviour where the two differ (proposal caps,
/// frame sampling).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}
