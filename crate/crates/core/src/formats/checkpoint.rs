//! SRCK parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SRCK" | u32 version
//! u32 config_len | config_len bytes of canonical model config text (UTF-8)
//! 32 bytes SHA-256 of the config text
//! u32 entry_count
//! per entry: u32 name_len | name | u32 ndim | ndim x u64 extent | u64 offset (elements)
//! u64 element_count | element_count x f32
//! ```
//!
//! Entries are sorted by name and their offsets tile the payload contiguously.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::fsio::{self, Reader};
use super::KvConfig;
use crate::error::{Error, Result};
use crate::model::{Detector, ModelConfig};
use crate::numcore::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub entries: Vec<CheckpointEntry>,
    pub values: Vec<f32>,
}

pub fn config_digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

impl Checkpoint {
    pub fn from_store(cfg: &ModelConfig, store: &ParamStore<f32>) -> Self {
        let mut entries = Vec::with_capacity(store.len());
        let mut values = Vec::with_capacity(store.element_count());
        for (name, p) in store.iter() {
            entries.push(CheckpointEntry {
                name: name.to_string(),
                shape: p.value.shape().to_vec(),
                offset: values.len(),
            });
            values.extend_from_slice(p.value.data());
        }
        Self {
            config_text: cfg.canonical_text(),
            entries,
            values,
        }
    }

    pub fn element_count(&self) -> usize {
        self.values.len()
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::from_kv(&KvConfig::parse(&self.config_text)?)
    }

    /// Rebuilds the detector and its parameters, checking that every stored
    /// tensor matches the architecture by name and shape.
    pub fn restore(&self) -> Result<(Detector, ParamStore<f32>)> {
        let det = Detector::new(self.model_config()?)?;
        let mut store = det.init_params(0)?;
        if store.len() != self.entries.len() {
            return Err(Error::contract(
                "checkpoint restore",
                format!(
                    "architecture has {} tensors, checkpoint {}",
                    store.len(),
                    self.entries.len()
                ),
            ));
        }
        for e in &self.entries {
            let Some(param) = store.get_mut(&e.name) else {
                return Err(Error::contract(
                    "checkpoint restore",
                    format!("unknown tensor `{}`", e.name),
                ));
            };
            if param.value.shape() != e.shape.as_slice() {
                return Err(Error::shape("checkpoint restore", param.value.shape(), &e.shape));
            }
            let n = param.value.len();
            param
                .value
                .data_mut()
                .copy_from_slice(&self.values[e.offset..e.offset + n]);
        }
        Ok((det, store))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + self.values.len() * 4);
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        b.extend_from_slice(self.config_text.as_bytes());
        b.extend_from_slice(&config_digest(&self.config_text));
        b.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            b.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            b.extend_from_slice(e.name.as_bytes());
            b.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            b.extend_from_slice(&(e.offset as u64).to_le_bytes());
        }
        b.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.fail("bad magic, not an SRCK checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let config_text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.fail("config text is not UTF-8"))?
            .to_string();
        if r.take(32)? != config_digest(&config_text) {
            return Err(r.fail("config digest mismatch"));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        let mut expected_offset = 0usize;
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| r.fail("tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            if offset != expected_offset {
                return Err(r.fail(format!(
                    "tensor `{name}` at offset {offset}, expected {expected_offset}"
                )));
            }
            if let Some(prev) = entries.last().map(|e: &CheckpointEntry| &e.name) {
                if *prev >= name {
                    return Err(r.fail(format!("entries not sorted at `{name}`")));
                }
            }
            expected_offset += shape.iter().product::<usize>();
            entries.push(CheckpointEntry { name, shape, offset });
        }
        let n = r.u64()? as usize;
        if n != expected_offset || r.remaining() != n * 4 {
            return Err(r.fail(format!(
                "payload holds {} bytes, manifest needs {} values",
                r.remaining(),
                expected_offset
            )));
        }
        let values = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            config_text,
            entries,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsio::read(path)?, path)
    }
}

impl Checkpoint {
    /// Parameter tensor by name, for inspection.
    pub fn tensor(&self, name: &str) -> Option<Tensor<f32>> {
        let e = self.entries.iter().find(|e| e.name == name)?;
        let n: usize = e.shape.iter().product();
        Tensor::new(&e.shape, self.values[e.offset..e.offset + n].to_vec()).ok()
    }
}
