use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::graph::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Option<Vec<f64>>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

/// Named trainable tensors together with their Adam state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Param {
            name: name.clone(),
            value,
            grad: None,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.0].grad.as_deref()
    }

    /// Number of optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds the parameter gradients of one backward pass onto the stored ones.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.param_grads() {
            let Some(g) = g else { continue };
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => p.grad = Some(g.to_vec()),
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Scales every stored gradient in place.
    pub fn scale_grads(&mut self, s: f64) {
        for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `sqrt(Σ g²)` over every stored gradient entry.
    pub fn grad_l2_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Parameter values as `(name, tensor)` pairs in insertion order.
    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }
}

/// Adam optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// Applies one bias-corrected Adam update to every parameter, then clears
    /// the gradients and bumps the store's step counter.
    pub fn step(&self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if let Some(p) = store.params.iter().find(|p| p.grad.is_none()) {
            return Err(AutodiffError::MissingGradient(p.name.clone()));
        }
        let t = (store.step + 1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in &mut store.params {
            let g = p.grad.take().expect("checked above");
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let m = self.beta1 * p.first_moment[i] + (1.0 - self.beta1) * g[i];
                let v = self.beta2 * p.second_moment[i] + (1.0 - self.beta2) * g[i] * g[i];
                p.first_moment[i] = m;
                p.second_moment[i] = v;
                w[i] -= lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            }
        }
        store.step += 1;
        Ok(())
    }
}
