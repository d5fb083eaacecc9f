use serde::{Deserialize, Serialize};

use super::{Gradients, ParamGrad, ParamStore};
use crate::error::{MoefError, Result};

/// Adagrad with per-element accumulators of squared gradients.
///
/// ```text
/// acc += g²
/// p   -= lr · g / (sqrt(acc) + ε)
/// ```
///
/// Sparse row gradients (from embedding lookups) update only the touched
/// rows; untouched rows would receive `g = 0`, which leaves both the
/// parameter and its accumulator unchanged anyway.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adagrad {
    pub learning_rate: f64,
    pub epsilon: f64,
    accumulators: Vec<Vec<f64>>,
}

impl Adagrad {
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(learning_rate: f64, epsilon: f64, params: &ParamStore) -> Self {
        let accumulators = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            learning_rate,
            epsilon,
            accumulators,
        }
    }

    pub(crate) fn from_parts(learning_rate: f64, epsilon: f64, accumulators: Vec<Vec<f64>>) -> Self {
        Self {
            learning_rate,
            epsilon,
            accumulators,
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    /// Applies one update for every parameter present in `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if self.accumulators.len() != params.len() {
            return Err(MoefError::dim(format!(
                "optimizer tracks {} parameters, store has {}",
                self.accumulators.len(),
                params.len()
            )));
        }
        let (lr, eps) = (self.learning_rate, self.epsilon);
        for (id, grad) in grads.params() {
            let param = params.get_mut(id);
            if !param.requires_grad {
                continue;
            }
            let acc = &mut self.accumulators[id.index()];
            let values = param.value.data_mut();
            if acc.len() != values.len() {
                return Err(MoefError::dim(format!(
                    "accumulator for {} has {} entries, parameter has {}",
                    param.name,
                    acc.len(),
                    values.len()
                )));
            }
            match grad {
                ParamGrad::Dense(g) => {
                    if g.len() != values.len() {
                        return Err(MoefError::dim(format!(
                            "gradient for {} has {} entries, parameter has {}",
                            param.name,
                            g.len(),
                            values.len()
                        )));
                    }
                    update(values, acc, g, lr, eps);
                }
                ParamGrad::Rows { width, rows } => {
                    for (&r, g) in rows {
                        let span = r * width..(r + 1) * width;
                        update(&mut values[span.clone()], &mut acc[span], g, lr, eps);
                    }
                }
            }
        }
        Ok(())
    }
}

fn update(values: &mut [f64], acc: &mut [f64], g: &[f64], lr: f64, eps: f64) {
    for ((p, a), &g) in values.iter_mut().zip(acc.iter_mut()).zip(g) {
        *a += g * g;
        if g != 0.0 {
            *p -= lr * g / (a.sqrt() + eps);
        }
    }
}
