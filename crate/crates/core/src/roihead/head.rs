use crate::error::Result;
use crate::layers::{GradMap, Linear};
use crate::numcore::{self as nc, ParamStore, Scalar, Tensor};

/// Two hidden fully-connected layers over the flattened pooled region, then
/// sibling class scores (`C + 1`) and class-agnostic box deltas (`4`).
#[derive(Clone, Debug)]
pub struct RcnnHead {
    pub fc6: Linear,
    pub fc7: Linear,
    pub cls: Linear,
    pub reg: Linear,
}

#[derive(Clone, Debug)]
pub struct RcnnCache<T> {
    flat: Tensor<T>,
    h6_pre: Tensor<T>,
    h6: Tensor<T>,
    h7_pre: Tensor<T>,
    h7: Tensor<T>,
    pooled_shape: Vec<usize>,
}

impl RcnnHead {
    pub fn new(in_dim: usize, hidden: usize, num_classes: usize) -> Self {
        Self {
            fc6: Linear::new("rcnn.fc6", in_dim, hidden),
            fc7: Linear::new("rcnn.fc7", hidden, hidden),
            cls: Linear::new("rcnn.cls", hidden, num_classes + 1),
            reg: Linear::new("rcnn.reg", hidden, 4),
        }
    }

    pub fn param_count(&self) -> usize {
        self.fc6.param_count() + self.fc7.param_count() + self.cls.param_count() + self.reg.param_count()
    }

    pub fn init(&self, store: &mut ParamStore<f32>, seed: u64) -> Result<()> {
        self.fc6.init(store, seed, None)?;
        self.fc7.init(store, seed, None)?;
        self.cls.init(store, seed, Some(0.01))?;
        self.reg.init(store, seed, Some(0.001))
    }

    /// `pooled [R, C, P, P] -> (scores [R, C+1], deltas [R, 4])`.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        pooled: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, RcnnCache<T>)> {
        let r = pooled.shape()[0];
        let flat = pooled.clone().reshape(&[r, pooled.len() / r])?;
        let h6_pre = self.fc6.forward(p, &flat)?;
        let h6 = nc::relu(&h6_pre);
        let h7_pre = self.fc7.forward(p, &h6)?;
        let h7 = nc::relu(&h7_pre);
        let scores = self.cls.forward(p, &h7)?;
        let deltas = self.reg.forward(p, &h7)?;
        Ok((
            scores,
            deltas,
            RcnnCache {
                flat,
                h6_pre,
                h6,
                h7_pre,
                h7,
                pooled_shape: pooled.shape().to_vec(),
            },
        ))
    }

    /// Returns the gradient with respect to the pooled input.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &RcnnCache<T>,
        d_scores: &Tensor<T>,
        d_deltas: &Tensor<T>,
        grads: &mut GradMap<T>,
    ) -> Result<Tensor<T>> {
        let mut d_h7 = self.cls.backward(p, &cache.h7, d_scores, grads)?;
        d_h7.add_assign(&self.reg.backward(p, &cache.h7, d_deltas, grads)?)?;
        let d_h7_pre = nc::relu_backward(&cache.h7_pre, &d_h7);
        let d_h6 = self.fc7.backward(p, &cache.h6, &d_h7_pre, grads)?;
        let d_h6_pre = nc::relu_backward(&cache.h6_pre, &d_h6);
        let d_flat = self.fc6.backward(p, &cache.flat, &d_h6_pre, grads)?;
        d_flat.reshape(&cache.pooled_shape)
    }
}
