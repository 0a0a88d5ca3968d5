use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
}

/// Named trainable tensors with gradient accumulators.
///
/// Layers hold [`ParamId`]s into the store; a recurrent network reuses the
/// same ids across iterations, so the storage is shared, never copied.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].grad
    }

    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor<T>, &Tensor<T>) {
        let e = &mut self.entries[id.0];
        (&mut e.value, &e.grad)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn shapes(&self) -> Vec<(String, Shape)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.shape()))
            .collect()
    }

    /// Replace a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "parameter {} has shape {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: e.grad.cast(),
                })
                .collect(),
        }
    }
}

/// He-normal standard deviation `sqrt(2 / (f^2 * n))` for a layer with
/// filter size `f` and `n` filters.
pub fn he_std(kernel: usize, filters: usize) -> f64 {
    (2.0 / (kernel * kernel * filters) as f64).sqrt()
}

/// Fill `kernel` with zero-mean normal draws of standard deviation
/// [`he_std`] and zero `bias`.
pub fn he_init<T: Real>(
    kernel: &mut Tensor<T>,
    bias: Option<&mut Tensor<T>>,
    filters: usize,
    rng: &mut ChaCha8Rng,
) {
    let f = kernel.shape()[3];
    let normal = Normal::new(0.0, he_std(f, filters)).expect("positive std");
    for v in kernel.data_mut() {
        *v = T::from_f64(normal.sample(rng));
    }
    if let Some(b) = bias {
        b.fill(T::zero());
    }
}

/// Seeded generator used for every random draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
