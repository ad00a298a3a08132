use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Grads, Graph, Var};
use super::tensor::Tensor;

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = t;
            return;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    /// `N(0, 1/fan_in)` weight of shape `[fan_in, fan_out]`.
    pub fn insert_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
        let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        self.insert(name, Tensor::from_vec(&[fan_in, fan_out], data));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All values concatenated in insertion order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Places every tensor on the tape as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// Places every tensor on the tape as a constant.
    pub fn bind_const(&self, g: &mut Graph) -> Bound {
        let vars = self.tensors.iter().map(|t| g.constant(t.clone())).collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    /// Binds parameters that are slices of one flat tape vector, so that a
    /// single leaf carries all of them (used for gradient checks).
    pub fn from_vars(set: &ParamSet, vars: Vec<Var>) -> Self {
        Self {
            vars,
            index: set.index.clone(),
        }
    }

    pub fn var(&self, name: &str) -> Var {
        self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in parameter order, zero where none reached a leaf.
    pub fn grads(&self, g: &Graph, grads: &Grads) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
            })
            .collect()
    }
}
