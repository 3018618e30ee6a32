//! Toy residual feature extractor with temporal shift inside each block.
//!
//! Layout: a stem (3x3 conv, frozen affine, relu, 2x2 max-pool), then one
//! stage per entry of `stage_channels`. Stage 0 keeps resolution, every later
//! stage halves it in its first block, so three stages give output stride 8.

use crate::error::{Error, Result};
use crate::layers::{Affine, Conv, GradMap};
use crate::numcore::{self as nc, ParamStore, Scalar, Tensor};
use crate::tshift::{temporal_shift, temporal_shift_backward, ShiftConfig, ShiftPlacement};

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub shift: ShiftConfig,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![16, 32, 64],
            blocks_per_stage: vec![1, 1, 1],
            shift: ShiftConfig::default(),
        }
    }
}

impl BackboneConfig {
    pub fn total_stride(&self) -> usize {
        2 << self.stage_channels.len().saturating_sub(1)
    }

    pub fn out_channels(&self) -> usize {
        *self.stage_channels.last().unwrap_or(&0)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks_per_stage.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return Err(Error::config(
                "backbone.stage_channels",
                "need at least one stage, all widths positive",
            ));
        }
        if self.blocks_per_stage.len() != self.stage_channels.len()
            || self.blocks_per_stage.contains(&0)
        {
            return Err(Error::config(
                "backbone.blocks_per_stage",
                "one positive block count per stage",
            ));
        }
        self.shift.validate()?;
        for (i, &c) in self.stage_channels.iter().enumerate() {
            self.shift.fraction.fold(c).map_err(|e| {
                Error::config(
                    "shift.fraction",
                    format!("stage {i} width {c}: {e}"),
                )
            })?;
        }
        Ok(())
    }

    /// Output `(Hf, Wf)` for an `h x w` input.
    pub fn feature_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let s = self.total_stride();
        if h % 2 != 0 || w % 2 != 0 || h < s || w < s {
            return Err(Error::contract(
                "extract_features",
                format!("input {h}x{w} must be even and at least {s} on each side"),
            ));
        }
        let (mut h, mut w) = (h / 2, w / 2);
        for _ in 1..self.stage_channels.len() {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        Ok((h, w))
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv1: Conv,
    aff1: Affine,
    conv2: Conv,
    aff2: Affine,
    proj: Option<(Conv, Affine)>,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    x: Tensor<T>,
    xs: Tensor<T>,
    b1: Tensor<T>,
    r1: Tensor<T>,
    pre: Tensor<T>,
}

impl Block {
    fn new(name: &str, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let proj = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv::new(format!("{name}.proj"), in_ch, out_ch, 1, stride),
                Affine::new(format!("{name}.proj_aff"), out_ch),
            )
        });
        Self {
            conv1: Conv::new(format!("{name}.conv1"), in_ch, out_ch, 3, stride),
            aff1: Affine::new(format!("{name}.aff1"), out_ch),
            conv2: Conv::new(format!("{name}.conv2"), out_ch, out_ch, 3, 1),
            aff2: Affine::new(format!("{name}.aff2"), out_ch),
            proj,
        }
    }

    fn param_count(&self) -> usize {
        let proj = self
            .proj
            .as_ref()
            .map_or(0, |(c, a)| c.param_count() + a.param_count());
        self.conv1.param_count() + self.aff1.param_count() + self.conv2.param_count()
            + self.aff2.param_count()
            + proj
    }

    fn init(&self, store: &mut ParamStore<f32>, seed: u64) -> Result<()> {
        self.conv1.init(store, seed, None)?;
        self.aff1.init(store)?;
        self.conv2.init(store, seed, None)?;
        self.aff2.init(store)?;
        if let Some((c, a)) = &self.proj {
            c.init(store, seed, None)?;
            a.init(store)?;
        }
        Ok(())
    }

    fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        input: Tensor<T>,
        shift: &ShiftConfig,
    ) -> Result<(Tensor<T>, BlockCache<T>)> {
        let shifted = temporal_shift(&input, shift)?;
        let (x, xs) = match shift.placement {
            ShiftPlacement::Residual => (input, shifted),
            ShiftPlacement::InPlace => (shifted.clone(), shifted),
        };
        let b1 = self.aff1.forward(p, &self.conv1.forward(p, &xs)?)?;
        let r1 = nc::relu(&b1);
        let mut pre = self.aff2.forward(p, &self.conv2.forward(p, &r1)?)?;
        match &self.proj {
            Some((c, a)) => pre.add_assign(&a.forward(p, &c.forward(p, &x)?)?)?,
            None => pre.add_assign(&x)?,
        }
        let out = nc::relu(&pre);
        Ok((out, BlockCache { x, xs, b1, r1, pre }))
    }

    fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &BlockCache<T>,
        shift: &ShiftConfig,
        grad_out: &Tensor<T>,
        grads: &mut GradMap<T>,
    ) -> Result<Tensor<T>> {
        let d_pre = nc::relu_backward(&cache.pre, grad_out);
        let d_a2 = self.aff2.backward(p, &d_pre)?;
        let d_r1 = self.conv2.backward(p, &cache.r1, &d_a2, grads)?;
        let d_b1 = nc::relu_backward(&cache.b1, &d_r1);
        let d_a1 = self.aff1.backward(p, &d_b1)?;
        let d_xs = self.conv1.backward(p, &cache.xs, &d_a1, grads)?;
        let d_skip = match &self.proj {
            Some((c, a)) => c.backward(p, &cache.x, &a.backward(p, &d_pre)?, grads)?,
            None => d_pre,
        };
        match shift.placement {
            ShiftPlacement::Residual => {
                let mut d = temporal_shift_backward(&d_xs, shift)?;
                d.add_assign(&d_skip)?;
                Ok(d)
            }
            ShiftPlacement::InPlace => {
                let mut d = d_xs;
                d.add_assign(&d_skip)?;
                temporal_shift_backward(&d, shift)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    stem: Conv,
    stem_aff: Affine,
    blocks: Vec<Block>,
}

/// Intermediates kept by [`Backbone::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct BackboneCache<T> {
    input: Tensor<T>,
    stem_pre: Tensor<T>,
    stem_relu_shape: Vec<usize>,
    argmax: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
}

impl Backbone {
    pub fn new(cfg: BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let c0 = cfg.stage_channels[0];
        let mut blocks = Vec::new();
        let mut in_ch = c0;
        for (s, (&ch, &n)) in cfg.stage_channels.iter().zip(&cfg.blocks_per_stage).enumerate() {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(Block::new(&format!("backbone.s{s}.b{b}"), in_ch, ch, stride));
                in_ch = ch;
            }
        }
        Ok(Self {
            stem: Conv::new("backbone.stem", 3, c0, 3, 1),
            stem_aff: Affine::new("backbone.stem_aff", c0),
            blocks,
            cfg,
        })
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count()
            + self.stem_aff.param_count()
            + self.blocks.iter().map(Block::param_count).sum::<usize>()
    }

    pub fn init(&self, store: &mut ParamStore<f32>, seed: u64) -> Result<()> {
        self.stem.init(store, seed, None)?;
        self.stem_aff.init(store)?;
        self.blocks.iter().try_for_each(|b| b.init(store, seed))
    }

    /// `frames [K, 3, H, W] -> features [K, C_out, Hf, Wf]`.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        frames: &Tensor<T>,
    ) -> Result<(Tensor<T>, BackboneCache<T>)> {
        let [k, c, h, w] = frames.dims4("extract_features")?;
        if c != 3 {
            return Err(Error::contract(
                "extract_features",
                format!("expected 3 input channels, got {c}"),
            ));
        }
        if k != self.cfg.shift.num_frames {
            return Err(Error::contract(
                "extract_features",
                format!("expected {} frames, got {k}", self.cfg.shift.num_frames),
            ));
        }
        self.cfg.feature_dims(h, w)?;
        let stem_pre = self.stem_aff.forward(p, &self.stem.forward(p, frames)?)?;
        let relu = nc::relu(&stem_pre);
        let pooled = nc::max_pool2d(&relu, 2, 2)?;
        let mut x = pooled.output;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, cache) = b.forward(p, x, &self.cfg.shift)?;
            caches.push(cache);
            x = out;
        }
        Ok((
            x,
            BackboneCache {
                input: frames.clone(),
                stem_pre,
                stem_relu_shape: relu.shape().to_vec(),
                argmax: pooled.argmax,
                blocks: caches,
            },
        ))
    }

    /// Accumulates parameter gradients; the input gradient is not needed.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &BackboneCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut GradMap<T>,
    ) -> Result<()> {
        self.backward_to_input(p, cache, grad_out, grads, false).map(|_| ())
    }

    /// Like [`Backbone::backward`], also returning the gradient for the frames.
    pub fn backward_with_input<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &BackboneCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut GradMap<T>,
    ) -> Result<Tensor<T>> {
        self.backward_to_input(p, cache, grad_out, grads, true)
            .map(|d| d.expect("input gradient requested"))
    }

    fn backward_to_input<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &BackboneCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut GradMap<T>,
        want_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let mut d = grad_out.clone();
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            d = b.backward(p, c, &self.cfg.shift, &d, grads)?;
        }
        let d_relu = nc::max_pool2d_backward(&cache.stem_relu_shape, &cache.argmax, &d);
        let d_pre = nc::relu_backward(&cache.stem_pre, &d_relu);
        let d_conv = self.stem_aff.backward(p, &d_pre)?;
        let dx = self.stem.backward(p, &cache.input, &d_conv, grads)?;
        Ok(want_input.then_some(dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_output_shape_and_stride() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.total_stride(), 8);
        assert_eq!(cfg.feature_dims(64, 64).unwrap(), (8, 8));
        assert_eq!(cfg.feature_dims(300, 400).unwrap(), (38, 50));
        assert!(cfg.feature_dims(63, 64).is_err());
        assert!(cfg.feature_dims(4, 64).is_err());

        let bb = Backbone::new(cfg).unwrap();
        let mut store = ParamStore::new();
        bb.init(&mut store, 1).unwrap();
        let frames = Tensor::<f32>::full(&[8, 3, 64, 64], 0.5);
        let (out, _) = bb.forward(&store, &frames).unwrap();
        assert_eq!(out.shape(), &[8, 64, 8, 8]);
        assert_eq!(store.element_count(), bb.param_count());
    }

    #[test]
    fn incompatible_shift_fraction_rejected() {
        let mut cfg = BackboneConfig::default();
        cfg.stage_channels = vec![12, 32, 64];
        assert!(Backbone::new(cfg).is_err());
    }
}
