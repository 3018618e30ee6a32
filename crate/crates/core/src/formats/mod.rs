//! On-disk formats: flat config text, checkpoints, frame containers and the
//! dataset manifest.

mod checkpoint;
mod frames;
mod fsio;
mod kvconfig;
mod manifest;

pub use checkpoint::{config_digest, Checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use frames::{FrameContainer, FRAMES_MAGIC, FRAMES_VERSION};
pub use fsio::{read, write_atomic};
pub use kvconfig::KvConfig;
pub use manifest::{
    read_classes, read_manifest, write_classes, write_manifest, ActorTrack, ClipRecord, Split,
    CLASSES_FILE, MANIFEST_FILE, MANIFEST_SCHEMA,
};
