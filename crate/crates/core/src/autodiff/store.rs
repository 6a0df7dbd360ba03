use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::{Graph, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub(super) struct Slot<T> {
    pub(super) value: Tensor<T>,
    pub(super) first_moment: Tensor<T>,
    pub(super) second_moment: Tensor<T>,
}

/// Named trainable tensors with their Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    pub(super) slots: BTreeMap<String, Slot<T>>,
    pub(super) step: u64,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            slots: BTreeMap::new(),
            step: 0,
        }
    }

    /// Inserts or replaces a parameter, resetting its moment buffers.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let (r, c) = value.shape();
        self.slots.insert(
            name.into(),
            Slot {
                value,
                first_moment: Tensor::zeros(r, c),
                second_moment: Tensor::zeros(r, c),
            },
        );
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
            .collect();
        self.insert(name, Tensor::from_vec(rows, cols, data));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.slots.get(name).map(|s| &s.first_moment)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.slots.get(name).map(|s| &s.second_moment)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Copies the parameter values at another precision. Moments and the
    /// step counter are reset.
    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for (name, value) in self.iter() {
            out.insert(name, value.cast());
        }
        out
    }

    /// Registers every parameter as a named leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bindings {
        let vars = self
            .slots
            .iter()
            .map(|(name, slot)| (name.clone(), graph.param(name.clone(), slot.value.clone())))
            .collect();
        Bindings { vars }
    }
}

/// Parameter name to graph node, for one graph.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    /// Panics when `name` was never bound; model code and parameter
    /// initialisation must agree on names.
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}
