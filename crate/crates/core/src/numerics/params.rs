use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{MoefError, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub requires_grad: bool,
}

impl Parameter {
    /// Group label used in reports: the name up to its first `.`.
    pub fn group(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Insertion order is the serialization order, so two stores built by the
/// same code path are layout-compatible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(MoefError::Contract(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            requires_grad: true,
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Marks every parameter whose group equals `group` as frozen or trainable.
    pub fn set_group_trainable(&mut self, group: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.group() == group) {
            p.requires_grad = trainable;
        }
    }
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)) for a `[fan_out, fan_in]` weight.
pub fn xavier_uniform<R: Rng>(rng: &mut R, fan_out: usize, fan_in: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_out, fan_in], bound)
}

pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches generated length")
}
