use std::collections::BTreeMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    /// Frozen parameters never receive gradients and are skipped by the optimizer.
    pub frozen: bool,
    velocity: Vec<T>,
}

/// Named parameter table, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
    step: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, frozen: bool) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract(
                "ParamStore::insert",
                format!("duplicate parameter name `{name}`"),
            ));
        }
        let velocity = vec![T::zero(); value.len()];
        self.params.insert(
            name,
            Param {
                value,
                frozen,
                velocity,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        match self.params.get(name) {
            Some(p) => &p.value,
            None => panic!("unknown parameter `{name}`"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn element_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Gives every trainable parameter a zeroed gradient buffer.
    pub fn attach_grads(&mut self) {
        for p in self.params.values_mut().filter(|p| !p.frozen) {
            p.value.ensure_grad();
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.value.zero_grad();
        }
    }

    /// Adds `grad` into the named parameter's gradient buffer.
    pub fn accumulate(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::contract("accumulate", format!("unknown parameter `{name}`")))?;
        if p.frozen {
            return Err(Error::contract(
                "accumulate",
                format!("parameter `{name}` is frozen"),
            ));
        }
        if p.value.shape() != grad.shape() {
            return Err(Error::shape("accumulate", p.value.shape(), grad.shape()));
        }
        for (a, &g) in p.value.ensure_grad().iter_mut().zip(grad.data()) {
            *a += g;
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, factor: T) {
        for p in self.params.values_mut() {
            if let Some(g) = p.value.grad_mut() {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    /// Global L2 norm over all gradient buffers.
    pub fn grad_norm(&self) -> T {
        self.params
            .values()
            .filter_map(|p| p.value.grad())
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn grads_finite(&self) -> bool {
        self.params.values().all(|p| p.value.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            frozen: p.frozen,
                            velocity: p.velocity.iter().map(|v| U::of(v.as_f64())).collect(),
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }
}

/// Momentum SGD on the accumulated gradients, then clears them.
///
/// `velocity = momentum * velocity + grad; param -= lr * velocity`.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, lr: T, momentum: T) -> Result<()> {
    if !(lr > T::zero()) {
        return Err(Error::contract("sgd_step", "learning rate must be positive"));
    }
    if let Some((name, _)) = store
        .params
        .iter()
        .find(|(_, p)| !p.frozen && p.value.grad().is_none())
    {
        return Err(Error::contract(
            "sgd_step",
            format!("parameter `{name}` has no gradient"),
        ));
    }
    for p in store.params.values_mut().filter(|p| !p.frozen) {
        let Param {
            value, velocity, ..
        } = p;
        let grad = value.grad().expect("checked above").to_vec();
        for ((w, v), g) in value.data_mut().iter_mut().zip(velocity.iter_mut()).zip(grad) {
            *v = momentum * *v + g;
            *w -= lr * *v;
        }
        value.zero_grad();
    }
    store.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(value), false).unwrap();
        s.attach_grads();
        s.accumulate("w", &Tensor::scalar(grad)).unwrap();
        s
    }

    #[test]
    fn plain_step() {
        let mut s = single(1.0, 0.5);
        sgd_step(&mut s, 0.1, 0.0).unwrap();
        assert!((s.get("w").data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(s.get("w").grad().unwrap(), &[0.0]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut s = single(0.3, 0.0);
        sgd_step(&mut s, 0.1, 0.9).unwrap();
        assert_eq!(s.get("w").data(), &[0.3]);
    }

    #[test]
    fn momentum_recurrence() {
        let mut s = single(0.0, 1.0);
        sgd_step(&mut s, 1.0, 0.9).unwrap();
        assert!((s.get("w").data()[0] + 1.0).abs() < 1e-15);
        s.accumulate("w", &Tensor::scalar(1.0)).unwrap();
        sgd_step(&mut s, 1.0, 0.9).unwrap();
        assert!((s.get("w").data()[0] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::scalar(1.0), false).unwrap();
        assert!(sgd_step(&mut s, 0.1, 0.0).is_err());
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut s = ParamStore::<f32>::new();
        s.insert("scale", Tensor::scalar(1.0), true).unwrap();
        s.attach_grads();
        sgd_step(&mut s, 0.1, 0.9).unwrap();
        assert_eq!(s.get("scale").data(), &[1.0]);
        assert!(s.accumulate("scale", &Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::scalar(1.0), false).unwrap();
        assert!(s.insert("a", Tensor::scalar(2.0), false).is_err());
    }
}
