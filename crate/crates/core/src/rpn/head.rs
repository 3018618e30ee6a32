use crate::error::Result;
use crate::layers::{Conv, GradMap};
use crate::numcore::{self as nc, ParamStore, Scalar, Tensor};

/// Shared 3x3 conv followed by sibling 1x1 objectness and box-delta convs.
///
/// Objectness channels come in `(background, foreground)` pairs per anchor,
/// delta channels in `(dx, dy, dw, dh)` quadruples per anchor.
#[derive(Clone, Debug)]
pub struct RpnHead {
    pub conv: Conv,
    pub cls: Conv,
    pub reg: Conv,
    pub anchors_per_location: usize,
}

#[derive(Clone, Debug)]
pub struct RpnOutput<T> {
    /// `[K, 2A, Hf, Wf]`
    pub logits: Tensor<T>,
    /// `[K, 4A, Hf, Wf]`
    pub deltas: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct RpnCache<T> {
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
}

impl RpnHead {
    pub fn new(in_channels: usize, channels: usize, anchors_per_location: usize) -> Self {
        Self {
            conv: Conv::new("rpn.conv", in_channels, channels, 3, 1),
            cls: Conv::new("rpn.cls", channels, 2 * anchors_per_location, 1, 1),
            reg: Conv::new("rpn.reg", channels, 4 * anchors_per_location, 1, 1),
            anchors_per_location,
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.cls.param_count() + self.reg.param_count()
    }

    pub fn init(&self, store: &mut ParamStore<f32>, seed: u64) -> Result<()> {
        self.conv.init(store, seed, Some(0.01))?;
        self.cls.init(store, seed, Some(0.01))?;
        self.reg.init(store, seed, Some(0.01))
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        features: &Tensor<T>,
    ) -> Result<(RpnOutput<T>, RpnCache<T>)> {
        let hidden_pre = self.conv.forward(p, features)?;
        let hidden = nc::relu(&hidden_pre);
        let logits = self.cls.forward(p, &hidden)?;
        let deltas = self.reg.forward(p, &hidden)?;
        Ok((RpnOutput { logits, deltas }, RpnCache { hidden_pre, hidden }))
    }

    /// Returns the gradient with respect to `features`.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        features: &Tensor<T>,
        cache: &RpnCache<T>,
        d_logits: &Tensor<T>,
        d_deltas: &Tensor<T>,
        grads: &mut GradMap<T>,
    ) -> Result<Tensor<T>> {
        let mut d_hidden = self.cls.backward(p, &cache.hidden, d_logits, grads)?;
        d_hidden.add_assign(&self.reg.backward(p, &cache.hidden, d_deltas, grads)?)?;
        let d_pre = nc::relu_backward(&cache.hidden_pre, &d_hidden);
        self.conv.backward(p, features, &d_pre, grads)
    }
}

/// Flat offsets of anchor `a` at cell `(i, j)` of frame `k` in the logits
/// (`2` values) and deltas (`4` values) tensors.
pub(crate) struct AnchorLayout {
    pub a: usize,
    pub hf: usize,
    pub wf: usize,
}

impl AnchorLayout {
    pub fn plane(&self) -> usize {
        self.hf * self.wf
    }

    /// Offset of channel `ch` (of `per` channels per anchor) for anchor index `idx`.
    pub fn offset(&self, frame: usize, idx: usize, per: usize, ch: usize) -> usize {
        let cell = idx / self.a;
        let a = idx % self.a;
        let channels = per * self.a;
        (frame * channels + per * a + ch) * self.plane() + cell
    }
}
