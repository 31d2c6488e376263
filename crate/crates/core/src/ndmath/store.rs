//! Named parameter tensors with matching gradient slots.

use std::collections::HashMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndmath::tensor::Tensor;
use crate::scalar::Scalar;

struct Entry<S> {
    name: String,
    value: Tensor<S>,
    grad: Tensor<S>,
}

/// All trainable tensors of a model, each with exactly one gradient slot of
/// identical shape. Iteration order is the definition order, which keeps
/// optimizer updates and checkpoints deterministic.
pub struct ParameterStore<S: Scalar> {
    entries: Vec<Entry<S>>,
    index: HashMap<String, usize>,
    seed: u64,
}

impl<S: Scalar> Clone for ParameterStore<S> {
    fn clone(&self) -> Self {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.clone(),
                    grad: e.grad.clone(),
                })
                .collect(),
            index: self.index.clone(),
            seed: self.seed,
        }
    }
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new(seed: u64) -> Self {
        ParameterStore { entries: Vec::new(), index: HashMap::new(), seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Deterministic RNG for parameter initialization, derived from the
    /// store seed and a stream label.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(stream))
    }

    pub fn define(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParameter { name: name.to_string() });
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry { name: name.to_string(), value, grad });
        Ok(())
    }

    /// Uniform(lo, hi) initialization.
    pub fn define_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        lo: f64,
        hi: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let numel: usize = shape.iter().product();
        let data: Vec<S> = (0..numel).map(|_| S::from_float(rng.random_range(lo..hi))).collect();
        self.define(name, Tensor::new(shape, data)?)
    }

    /// Glorot-uniform initialization for a `[fan_in, fan_out]` weight matrix.
    pub fn define_glorot(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.define_uniform(name, vec![fan_in, fan_out], -bound, bound, rng)
    }

    fn entry(&self, name: &str) -> Result<&Entry<S>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::UnknownParameter { name: name.to_string() })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.entry(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let idx = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownParameter { name: name.to_string() })?;
        let e = &mut self.entries[idx];
        if value.shape() != e.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                shapes: vec![e.value.shape().to_vec(), value.shape().to_vec()],
                detail: format!("parameter `{name}` shape is fixed"),
            });
        }
        e.value = value;
        Ok(())
    }

    /// Mutate one entry of a parameter in place (used by the
    /// finite-difference oracle).
    pub fn nudge(&mut self, name: &str, flat_index: usize, delta: S) -> Result<()> {
        let idx = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownParameter { name: name.to_string() })?;
        let d = &mut self.entries[idx].value.data_mut()[flat_index];
        *d = *d + delta;
        Ok(())
    }

    pub fn add_to_grad(&mut self, name: &str, delta: &Tensor<S>) -> Result<()> {
        let idx = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownParameter { name: name.to_string() })?;
        let e = &mut self.entries[idx];
        if delta.shape() != e.grad.shape() {
            return Err(Error::ShapeMismatch {
                op: "add_to_grad",
                shapes: vec![e.grad.shape().to_vec(), delta.shape().to_vec()],
                detail: format!("gradient slot of `{name}`"),
            });
        }
        for (g, &d) in e.grad.data_mut().iter_mut().zip(delta.data()) {
            *g = *g + d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g = S::zero();
            }
        }
    }

    /// Redraw every parameter from Uniform(lo, hi). Finite-difference checks
    /// run at such a well-spread point so that no gradient entry sits in the
    /// round-off noise floor of the central difference.
    pub fn randomize_all(&mut self, lo: f64, hi: f64, stream: u64) {
        let mut rng = self.rng(stream);
        for e in &mut self.entries {
            for v in e.value.data_mut() {
                *v = S::from_float(rng.random_range(lo..hi));
            }
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>, &Tensor<S>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value, &e.grad))
    }

    /// Apply `f(value, grad)` to every parameter, in definition order.
    pub fn update_each(&mut self, mut f: impl FnMut(&str, &mut Tensor<S>, &Tensor<S>)) {
        for e in &mut self.entries {
            f(&e.name, &mut e.value, &e.grad);
        }
    }

    pub fn total_parameters(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// `group.norm` lines for abort diagnostics.
    pub fn norm_report(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}={:.6e}", e.name, e.value.l2_norm()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}
