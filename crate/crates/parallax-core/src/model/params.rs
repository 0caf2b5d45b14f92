//! Named parameter storage and tape binding.

use crate::autodiff::{Gradients, Tape, Var};
use ndarray::ArrayD;
use std::cell::RefCell;
use std::collections::BTreeMap;

/// All learnable tensors, keyed by module path. `BTreeMap` keeps iteration
/// order deterministic for optimizers and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct Params {
    tensors: BTreeMap<String, ArrayD<f32>>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f32>) {
        let name = name.into();
        assert!(
            self.tensors.insert(name.clone(), value).is_none(),
            "duplicate parameter {}",
            name
        );
    }

    pub fn get(&self, name: &str) -> &ArrayD<f32> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {}", name))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f32> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {}", name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f32>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f32>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Zero every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, tensor) in self.tensors.iter_mut() {
            if name.starts_with(prefix) {
                tensor.fill(0.0);
            }
        }
    }
}

/// Binds parameters onto a tape on first use, remembering the leaf `Var` of
/// each so gradients can be collected by name after backward.
pub struct Binder<'t, 'p> {
    tape: &'t Tape,
    params: &'p Params,
    bound: RefCell<BTreeMap<String, Var>>,
}

impl<'t, 'p> Binder<'t, 'p> {
    pub fn new(tape: &'t Tape, params: &'p Params) -> Self {
        Self {
            tape,
            params,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    /// The tape leaf for a named parameter (bound on first call).
    pub fn var(&self, name: &str) -> Var {
        if let Some(&v) = self.bound.borrow().get(name) {
            return v;
        }
        let v = self.tape.param(self.params.get(name).clone());
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    /// Collect gradients for every bound parameter.
    pub fn grad_map(&self, grads: &mut Gradients) -> BTreeMap<String, ArrayD<f32>> {
        let mut out = BTreeMap::new();
        for (name, &var) in self.bound.borrow().iter() {
            if let Some(g) = grads.take(var) {
                out.insert(name.clone(), g);
            }
        }
        out
    }

    pub fn bound_names(&self) -> Vec<String> {
        self.bound.borrow().keys().cloned().collect()
    }
}
