use std::path::Path;

use actdet::formats::{Checkpoint, KvConfig};
use actdet::model::{Detector, MODEL_SECTIONS};
use actdet::numcore::ParamStore;
use actdet::{Error, Result};

/// Every section a config file may contain.
const KNOWN_SECTIONS: [&str; 9] = [
    "synth", "model", "backbone", "shift", "rpn", "roi", "train", "eval", "decode",
];

/// Parses `path` (an empty config when absent) and rejects unknown sections.
pub fn load(path: Option<&Path>) -> Result<KvConfig> {
    let kv = match path {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::new(),
    };
    for key in kv.keys() {
        let section = key.split('.').next().unwrap_or("");
        if !KNOWN_SECTIONS.contains(&section) || !key.contains('.') {
            return Err(Error::Config {
                field: key.to_string(),
                detail: format!("unknown section (expected one of {})", KNOWN_SECTIONS.join(", ")),
            });
        }
    }
    Ok(kv)
}

/// Model sections plus `extra`, for [`KvConfig::reject_unused`].
pub fn model_and(extra: &[&'static str]) -> Vec<&'static str> {
    MODEL_SECTIONS.iter().copied().chain(extra.iter().copied()).collect()
}

/// Loads and restores a checkpoint. Anything wrong with its contents is a
/// format error on `path`.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Detector, ParamStore<f32>)> {
    let ckpt = Checkpoint::load(path)?;
    let (det, store) = ckpt.restore().map_err(|e| match e {
        Error::Config { .. } | Error::Contract { .. } | Error::Shape { .. } => Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        },
        other => other,
    })?;
    Ok((ckpt, det, store))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    actdet::formats::write_atomic(path, text.as_bytes())
}
