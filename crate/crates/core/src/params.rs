//! Named parameter storage.
//!
//! A [`ParamSet`] owns every trainable value of a model as flat `f64`
//! buffers in a stable registration order; enumeration is complete and each
//! value appears exactly once. For a forward pass the set is bound to a
//! tape, yielding one differentiable leaf per entry.

use crate::autodiff::{Tape, Tensor};
use crate::rng::Rng;

#[derive(Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Xavier/Glorot uniform over (fan_in, fan_out).
    Xavier(usize, usize),
    Normal(f64),
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

#[derive(Clone, Default, Debug)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    /// Register a parameter; returns its stable index.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut Rng) -> usize {
        let name = name.into();
        debug_assert!(
            !self.entries.iter().any(|e| e.name == name),
            "duplicate parameter name {name}"
        );
        let n: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Xavier(fan_in, fan_out) => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.uniform_in(-a, a)).collect()
            }
            Init::Normal(std) => (0..n).map(|_| rng.normal() * std).collect(),
        };
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            value,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    pub fn values_mut(&mut self, idx: usize) -> &mut Vec<f64> {
        &mut self.entries[idx].value
    }

    /// Total number of scalar parameters.
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Create one differentiable leaf per entry on `tape`.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        BoundParams {
            tensors: self
                .entries
                .iter()
                .map(|e| tape.leaf(e.value.clone(), &e.shape))
                .collect(),
        }
    }

    /// Overwrite all values from another set with identical layout.
    pub fn load_values(&mut self, values: Vec<(String, Vec<usize>, Vec<f64>)>) -> crate::Result<()> {
        if values.len() != self.entries.len() {
            return Err(crate::Error::Checkpoint(format!(
                "parameter count mismatch: {} stored vs {} expected",
                values.len(),
                self.entries.len()
            )));
        }
        for (entry, (name, shape, value)) in self.entries.iter_mut().zip(values) {
            if entry.name != name || entry.shape != shape {
                return Err(crate::Error::Checkpoint(format!(
                    "parameter layout mismatch at `{}`",
                    entry.name
                )));
            }
            entry.value = value;
        }
        Ok(())
    }
}

/// Tape-bound view of a [`ParamSet`], aligned by index.
pub struct BoundParams {
    tensors: Vec<Tensor>,
}

impl BoundParams {
    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Gradient per parameter after backward (zeros where unreached).
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| t.grad_or_zeros()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_order_is_stable_and_complete() {
        let mut rng = Rng::new(1);
        let mut ps = ParamSet::new();
        let a = ps.add("a", &[2, 3], Init::Zeros, &mut rng);
        let b = ps.add("b", &[4], Init::Ones, &mut rng);
        assert_eq!((a, b), (0, 1));
        assert_eq!(ps.total(), 10);
        assert_eq!(ps.entry(b).value, vec![1.0; 4]);
    }

    #[test]
    fn bound_grads_align_with_entries() {
        let mut rng = Rng::new(1);
        let mut ps = ParamSet::new();
        let w = ps.add("w", &[2], Init::Const(3.0), &mut rng);
        let tape = Tape::new();
        let bound = ps.bind(&tape);
        let y = bound.get(w).mul(bound.get(w)).sum_all();
        tape.backward(&y).unwrap();
        assert_eq!(bound.grads()[w], vec![6.0, 6.0]);
    }
}
