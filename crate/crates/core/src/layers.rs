//! Named-parameter layer wrappers shared by the backbone and both heads.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::numcore::{self as nc, ParamStore, Scalar, Tensor};

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct GradMap<T> {
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> GradMap<T> {
    pub fn new() -> Self {
        Self {
            grads: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, grad: Tensor<T>) -> Result<()> {
        match self.grads.get_mut(name) {
            Some(acc) => acc.add_assign(&grad),
            None => {
                self.grads.insert(name.to_string(), grad);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn merge(&mut self, other: GradMap<T>) -> Result<()> {
        for (k, v) in other.grads {
            self.add(&k, v)?;
        }
        Ok(())
    }

    /// Adds every gradient into the store's buffers.
    pub fn apply_to(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, g) in &self.grads {
            store.accumulate(name, g)?;
        }
        Ok(())
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, so each tensor's init is independent of build order
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn normal_tensor(shape: &[usize], std: f64, seed: u64, name: &str) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| dist.sample(&mut rng) as f32)
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }

    /// He fan-in initialisation, or a fixed std when given.
    pub fn init(&self, store: &mut ParamStore<f32>, seed: u64, std: Option<f64>) -> Result<()> {
        let fan_in = (self.in_ch * self.kernel * self.kernel) as f64;
        let std = std.unwrap_or((2.0 / fan_in).sqrt());
        let wn = self.weight_name();
        store.insert(
            wn.clone(),
            normal_tensor(&[self.out_ch, self.in_ch, self.kernel, self.kernel], std, seed, &wn),
            false,
        )?;
        store.insert(self.bias_name(), Tensor::zeros(&[self.out_ch]), false)
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        nc::conv2d(
            x,
            p.get(&self.weight_name()),
            p.get(&self.bias_name()),
            self.stride,
            self.padding,
        )
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut GradMap<T>,
    ) -> Result<Tensor<T>> {
        let (dx, dw, db) = nc::conv2d_backward(
            x,
            p.get(&self.weight_name()),
            p.get(&self.bias_name()),
            self.stride,
            self.padding,
            grad_out,
        )?;
        grads.add(&self.weight_name(), dw)?;
        grads.add(&self.bias_name(), db)?;
        Ok(dx)
    }
}

/// Frozen per-channel affine (stands in for frozen batch normalisation).
#[derive(Clone, Debug)]
pub struct Affine {
    pub name: String,
    pub channels: usize,
}

impl Affine {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn scale_name(&self) -> String {
        format!("{}.scale", self.name)
    }

    pub fn shift_name(&self) -> String {
        format!("{}.shift", self.name)
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn init(&self, store: &mut ParamStore<f32>) -> Result<()> {
        store.insert(self.scale_name(), Tensor::full(&[self.channels], 1.0), true)?;
        store.insert(self.shift_name(), Tensor::zeros(&[self.channels]), true)
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        nc::frozen_affine(x, p.get(&self.scale_name()), p.get(&self.shift_name()))
    }

    pub fn backward<T: Scalar>(&self, p: &ParamStore<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        nc::frozen_affine_backward(p.get(&self.scale_name()), grad_out)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }

    pub fn init(&self, store: &mut ParamStore<f32>, seed: u64, std: Option<f64>) -> Result<()> {
        let std = std.unwrap_or((2.0 / self.in_dim as f64).sqrt());
        let wn = self.weight_name();
        store.insert(
            wn.clone(),
            normal_tensor(&[self.out_dim, self.in_dim], std, seed, &wn),
            false,
        )?;
        store.insert(self.bias_name(), Tensor::zeros(&[self.out_dim]), false)
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        nc::linear(x, p.get(&self.weight_name()), p.get(&self.bias_name()))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut GradMap<T>,
    ) -> Result<Tensor<T>> {
        let (dx, dw, db) = nc::linear_backward(
            x,
            p.get(&self.weight_name()),
            p.get(&self.bias_name()),
            grad_out,
        )?;
        grads.add(&self.weight_name(), dw)?;
        grads.add(&self.bias_name(), db)?;
        Ok(dx)
    }
}
