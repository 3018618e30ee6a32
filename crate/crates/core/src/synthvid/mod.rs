//! Synthetic clips whose classes are defined only by motion, the segment
//! frame sampler, and dataset loading.

mod dataset;
mod render;
mod sampling;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use dataset::{ClipBatch, Dataset};
pub use render::{clip_id, render_clip, ActionClass};
pub use sampling::{resize_frames, sample_frames};

use crate::error::{Error, Result};
use crate::formats::{
    write_classes, write_manifest, ClipRecord, KvConfig, Split, CLASSES_FILE, MANIFEST_FILE,
    MANIFEST_SCHEMA,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<ActionClass>,
    pub num_clips: usize,
    pub actors_per_clip: usize,
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub train_fraction: f64,
    /// Actor side range in pixels for translating and static actors.
    pub min_actor: f64,
    pub max_actor: f64,
    /// Horizontal speed range, pixels per frame.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Final-to-initial side ratio of growing actors.
    pub scale_range: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: vec![
                ActionClass::MoveRight,
                ActionClass::MoveLeft,
                ActionClass::Grow,
                ActionClass::Shrink,
            ],
            num_clips: 100,
            actors_per_clip: 2,
            frames_per_clip: 16,
            height: 64,
            width: 64,
            noise_std: 0.02,
            seed: 42,
            train_fraction: 0.8,
            min_actor: 12.0,
            max_actor: 20.0,
            min_speed: 1.2,
            max_speed: 2.0,
            scale_range: 2.0,
        }
    }
}

/// Counts printed after generation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthSummary {
    pub clips: usize,
    pub train_clips: usize,
    pub test_clips: usize,
    /// Actors per class, in class order.
    pub actors_per_class: Vec<(String, usize)>,
}

impl SynthSpec {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let s = Self {
            classes: kv.get_list("synth.classes", d.classes)?,
            num_clips: kv.get("synth.num_clips", d.num_clips)?,
            actors_per_clip: kv.get("synth.actors_per_clip", d.actors_per_clip)?,
            frames_per_clip: kv.get("synth.frames_per_clip", d.frames_per_clip)?,
            height: kv.get("synth.height", d.height)?,
            width: kv.get("synth.width", d.width)?,
            noise_std: kv.get("synth.noise_std", d.noise_std)?,
            seed: kv.get("synth.seed", d.seed)?,
            train_fraction: kv.get("synth.train_fraction", d.train_fraction)?,
            min_actor: kv.get("synth.min_actor", d.min_actor)?,
            max_actor: kv.get("synth.max_actor", d.max_actor)?,
            min_speed: kv.get("synth.min_speed", d.min_speed)?,
            max_speed: kv.get("synth.max_speed", d.max_speed)?,
            scale_range: kv.get("synth.scale_range", d.scale_range)?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("synth.classes", "at least one class"));
        }
        if let Some(c) = self.classes.iter().enumerate().find(|(i, c)| self.classes[..*i].contains(c)) {
            return Err(Error::config("synth.classes", format!("repeated class `{}`", c.1)));
        }
        if self.num_clips == 0 {
            return Err(Error::config("synth.num_clips", "must be positive"));
        }
        if !(1..=4).contains(&self.actors_per_clip) {
            return Err(Error::config("synth.actors_per_clip", "must lie in 1..=4"));
        }
        if self.frames_per_clip < 8 {
            return Err(Error::config("synth.frames_per_clip", "at least 8 frames"));
        }
        if self.height < 32 || self.width < 32 {
            return Err(Error::config("synth.height", "frames must be at least 32x32"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("synth.noise_std", "must be finite and non-negative"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::config("synth.train_fraction", "must lie in (0, 1]"));
        }
        if !(8.0 <= self.min_actor && self.min_actor <= self.max_actor) {
            return Err(Error::config("synth.min_actor", "need 8 <= min_actor <= max_actor"));
        }
        if !(0.0 < self.min_speed && self.min_speed <= self.max_speed) {
            return Err(Error::config("synth.min_speed", "need 0 < min_speed <= max_speed"));
        }
        if !(self.scale_range > 1.0) {
            return Err(Error::config("synth.scale_range", "must exceed 1"));
        }
        Ok(())
    }

    /// Seeded clip-level split: the first `train_fraction` of a shuffled
    /// index order is the training split.
    pub fn splits(&self) -> Vec<Split> {
        let mut order: Vec<usize> = (0..self.num_clips).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x5EED_5EED));
        let n_train = ((self.num_clips as f64 * self.train_fraction).round() as usize).min(self.num_clips);
        let mut split = vec![Split::Test; self.num_clips];
        for &i in &order[..n_train] {
            split[i] = Split::Train;
        }
        split
    }
}

/// Renders every clip and writes `classes.txt`, `manifest.jsonl` and one
/// frame container per clip under `root`.
pub fn generate_dataset(spec: &SynthSpec, root: &Path) -> Result<SynthSummary> {
    spec.validate()?;
    let splits = spec.splits();
    let rendered: Vec<_> = (0..spec.num_clips)
        .into_par_iter()
        .map(|i| render_clip(spec, i))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(spec.num_clips);
    let mut per_class = vec![0usize; spec.classes.len()];
    for (i, (container, actors)) in rendered.iter().enumerate() {
        let file = format!("clips/{}.srvf", clip_id(i));
        container.save(&root.join(&file))?;
        for a in actors {
            if let Some(k) = spec.classes.iter().position(|c| c.name() == a.class) {
                per_class[k] += 1;
            }
        }
        records.push(ClipRecord {
            schema: MANIFEST_SCHEMA,
            id: clip_id(i),
            split: splits[i],
            frames: spec.frames_per_clip,
            height: spec.height,
            width: spec.width,
            file,
            actors: actors.clone(),
        });
    }
    write_classes(&root.join(CLASSES_FILE), &spec.class_names())?;
    write_manifest(&root.join(MANIFEST_FILE), &records)?;

    let train_clips = splits.iter().filter(|&&s| s == Split::Train).count();
    Ok(SynthSummary {
        clips: spec.num_clips,
        train_clips,
        test_clips: spec.num_clips - train_clips,
        actors_per_class: spec.class_names().into_iter().zip(per_class).collect(),
    })
}
