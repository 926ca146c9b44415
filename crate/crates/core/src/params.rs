//! Named parameter collections.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Graph, Tensor, Var};
use crate::error::{contract, Result};
use crate::scalar::Scalar;

/// Parameters keyed by dotted name, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T: Scalar> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| contract!("missing parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| contract!("missing parameter `{name}`"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.tensors.values_mut()
    }

    pub fn into_iter(self) -> impl Iterator<Item = (String, Tensor<T>)> {
        self.tensors.into_iter()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            h.update(t.le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Puts every tensor into `g` as a borrowed leaf.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p, T>, trainable: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), g.param(v, trainable)))
                .collect(),
        }
    }

    pub(crate) fn init_normal(&mut self, rng: &mut impl Rng, name: &str, rows: usize, cols: usize, std: f64) {
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..rows * cols).map(|_| T::c(dist.sample(rng))).collect();
        self.insert(name, Tensor::matrix(rows, cols, data).expect("consistent shape"));
    }

    pub(crate) fn init_full(&mut self, name: &str, rows: usize, cols: usize, v: f64) {
        self.insert(name, Tensor::full(rows, cols, T::c(v)));
    }
}

/// Graph variables of a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| contract!("parameter `{name}` not bound"))
    }

    /// Gradients in parameter-name order; zeros where the loss did not reach.
    pub fn collect_grads<T: Scalar>(&self, params: &ParamSet<T>, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .map(|(name, v)| {
                grads
                    .take(*v)
                    .unwrap_or_else(|| Tensor::zeros_like(&params.tensors[name]))
            })
            .collect()
    }
}
