//! Dataset manifest (`manifest.jsonl`, one clip per line) and `classes.txt`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fsio;
use crate::error::{Error, Result};
use crate::rpn::BBox;

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CLASSES_FILE: &str = "classes.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One actor: its class name and one box per clip frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorTrack {
    pub class: String,
    pub boxes: Vec<BBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub schema: u32,
    pub id: String,
    pub split: Split,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Frame container path relative to the dataset root.
    pub file: String,
    pub actors: Vec<ActorTrack>,
}

pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("manifest records serialize"));
        text.push('\n');
    }
    fsio::write_atomic(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    let bytes = fsio::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::format(path, "not UTF-8"))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ClipRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        if r.schema != MANIFEST_SCHEMA {
            return Err(Error::format(
                path,
                format!("line {}: schema {} unsupported", n + 1, r.schema),
            ));
        }
        if let Some(a) = r.actors.iter().find(|a| a.boxes.len() != r.frames) {
            return Err(Error::format(
                path,
                format!("clip {}: actor track of {} boxes for {} frames", r.id, a.boxes.len(), r.frames),
            ));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_classes(path: &Path, classes: &[String]) -> Result<()> {
    let text: String = classes.iter().map(|c| format!("{c}\n")).collect();
    fsio::write_atomic(path, text.as_bytes())
}

pub fn read_classes(path: &Path) -> Result<Vec<String>> {
    let bytes = fsio::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::format(path, "not UTF-8"))?;
    let classes: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if classes.is_empty() {
        return Err(Error::format(path, "no classes"));
    }
    Ok(classes)
}
