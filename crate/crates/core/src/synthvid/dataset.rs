use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::formats::{read_classes, read_manifest, ClipRecord, FrameContainer, Split, CLASSES_FILE, MANIFEST_FILE};
use crate::numcore::Tensor;
use crate::rpn::BoxSet;

use super::resize_frames;

/// Sampled frames of one clip with their labelled ground truth.
#[derive(Clone, Debug)]
pub struct ClipBatch {
    pub clip_id: String,
    pub frame_indices: Vec<usize>,
    /// `[K, 3, H, W]` in `[0, 1]`.
    pub frames: Tensor<f32>,
    /// Per sampled frame: boxes with class ids in `1..=C`.
    pub targets: Vec<BoxSet>,
}

/// A dataset root loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub records: Vec<ClipRecord>,
    containers: Vec<FrameContainer>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let classes = read_classes(&root.join(CLASSES_FILE))?;
        let manifest = root.join(MANIFEST_FILE);
        let records = read_manifest(&manifest)?;
        let mut containers = Vec::with_capacity(records.len());
        for r in &records {
            if let Some(a) = r.actors.iter().find(|a| !classes.contains(&a.class)) {
                return Err(Error::format(
                    &manifest,
                    format!("clip {}: class `{}` not in {CLASSES_FILE}", r.id, a.class),
                ));
            }
            let path = root.join(&r.file);
            let c = FrameContainer::load(&path)?;
            if (c.frames, c.height, c.width, c.channels) != (r.frames, r.height, r.width, 3) {
                return Err(Error::format(
                    &path,
                    format!(
                        "container is {}x{}x{}x{}, manifest says {}x3x{}x{}",
                        c.frames, c.channels, c.height, c.width, r.frames, r.height, r.width
                    ),
                ));
            }
            containers.push(c);
        }
        Ok(Self {
            root: root.to_path_buf(),
            classes,
            records,
            containers,
        })
    }

    /// Fails unless the model's class list equals the dataset's.
    pub fn check_vocabulary(&self, model_classes: &[String]) -> Result<()> {
        if model_classes != self.classes.as_slice() {
            return Err(Error::Vocabulary {
                model: model_classes.to_vec(),
                data: self.classes.clone(),
            });
        }
        Ok(())
    }

    /// Record indices of one split, in manifest order.
    pub fn split(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name).map(|i| i + 1)
    }

    pub fn container(&self, clip: usize) -> &FrameContainer {
        &self.containers[clip]
    }

    /// Frames `indices` of clip `clip`, resized to `height x width` when needed.
    pub fn clip_batch(&self, clip: usize, indices: &[usize], height: usize, width: usize) -> Result<ClipBatch> {
        let r = &self.records[clip];
        let frames = self.containers[clip].to_tensor(indices)?;
        let targets: Vec<BoxSet> = indices
            .iter()
            .map(|&t| BoxSet {
                boxes: r.actors.iter().map(|a| a.boxes[t]).collect(),
                scores: None,
                labels: Some(
                    r.actors
                        .iter()
                        .map(|a| self.class_id(&a.class).expect("validated at load"))
                        .collect(),
                ),
            })
            .collect();
        let (frames, targets) = if (r.height, r.width) == (height, width) {
            (frames, targets)
        } else {
            resize_frames(&frames, &targets, height, width)?
        };
        Ok(ClipBatch {
            clip_id: r.id.clone(),
            frame_indices: indices.to_vec(),
            frames,
            targets,
        })
    }
}
