//! SRVF raw frame containers.
//!
//! ```text
//! b"SRVF" | u32 version | u32 T | u32 H | u32 W | u32 C | T*C*H*W u8 samples
//! ```
//!
//! Samples are ordered `[t][c][y][x]`; integers are little-endian.

use std::path::Path;

use super::fsio::{self, Reader};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const FRAMES_MAGIC: &[u8; 4] = b"SRVF";
pub const FRAMES_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameContainer {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl FrameContainer {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != frames * height * width * channels {
            return Err(Error::shape(
                "FrameContainer",
                &[frames, channels, height, width],
                &[data.len()],
            ));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    /// Quantises values in `[0, 1]` (clamped) of a `[T, C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let [n, c, h, w] = t.dims4("FrameContainer::from_tensor")?;
        let data = t
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::new(n, h, w, c, data)
    }

    fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [u8] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Selected frames as `[K, C, H, W]` scaled to `[0, 1]`.
    pub fn to_tensor(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.frames) {
            return Err(Error::contract(
                "FrameContainer::to_tensor",
                format!("frame {bad} of {}", self.frames),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * self.frame_len());
        for &i in indices {
            data.extend(self.frame(i).iter().map(|&b| b as f32 / 255.0));
        }
        Tensor::new(&[indices.len(), self.channels, self.height, self.width], data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(24 + self.data.len());
        b.extend_from_slice(FRAMES_MAGIC);
        for v in [
            FRAMES_VERSION,
            self.frames as u32,
            self.height as u32,
            self.width as u32,
            self.channels as u32,
        ] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&self.data);
        b
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4)? != FRAMES_MAGIC {
            return Err(r.fail("bad magic, not an SRVF frame container"));
        }
        let version = r.u32()?;
        if version != FRAMES_VERSION {
            return Err(r.fail(format!("unsupported frame container version {version}")));
        }
        let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
        let need = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if need != Some(r.remaining()) {
            return Err(r.fail(format!(
                "header declares {dims:?} samples, payload has {} bytes",
                r.remaining()
            )));
        }
        let data = r.take(r.remaining())?.to_vec();
        Self::new(dims[0], dims[1], dims[2], dims[3], data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsio::read(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_payload_checked() {
        let fc = FrameContainer::new(2, 2, 3, 1, (0..12).collect()).unwrap();
        let b = fc.to_bytes();
        assert_eq!(&b[..4], b"SRVF");
        assert_eq!(b.len(), 24 + 12);
        let p = Path::new("mem");
        assert_eq!(FrameContainer::from_bytes(&b, p).unwrap(), fc);
        assert!(FrameContainer::from_bytes(&b[..b.len() - 1], p).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(FrameContainer::from_bytes(&extra, p).is_err());
    }

    #[test]
    fn tensor_scaling() {
        let fc = FrameContainer::new(1, 1, 2, 1, vec![0, 255]).unwrap();
        let t = fc.to_tensor(&[0, 0]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(FrameContainer::from_tensor(&t).unwrap().frame(1), &[0, 255]);
    }
}
