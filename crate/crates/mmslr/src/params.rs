//! Named parameter storage shared by all model kinds. Parameters live
//! outside the tape; each training step leafs them in, and the optimizer
//! applies the collected gradients afterwards.

use crate::error::{Error, Result};
use crate::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        self.values[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Leaf every parameter into the tape, in registration order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Gradients for every parameter, zeros where none accumulated.
    pub fn collect_grads(&self, leaves: &[Var], grads: &Grads) -> Vec<Tensor> {
        self.values
            .iter()
            .zip(leaves)
            .map(|(t, &v)| grads.of(v, t.shape()))
            .collect()
    }

    /// Copy values from another store with identical layout.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint(
                "parameter names do not match model layout".into(),
            ));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch: {:?} vs {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}
