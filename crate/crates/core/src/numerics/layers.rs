use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{xavier_uniform, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{MoefError, Result};

/// Affine map `x Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_width: usize,
        out_width: usize,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.w"), xavier_uniform(rng, out_width, in_width))?;
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[out_width]))?;
        Ok(Self {
            weight,
            bias,
            in_width,
            out_width,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Stack of [`Linear`] layers with ReLU between them.
///
/// `widths` lists the input width followed by each layer's output width,
/// so `[144, 64, 1]` is two affine maps, 144→64→1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output: Activation,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        widths: &[usize],
        output: Activation,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(MoefError::Config(format!(
                "MLP {name} needs an input and at least one positive layer width, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.l{i}"), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, output })
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().expect("non-empty").out_width
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let width = tape.value(x).dims2().1;
        if width != self.in_width() {
            return Err(MoefError::dim(format!(
                "MLP expects width {}, got {:?}",
                self.in_width(),
                tape.shape(x)
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            h = if i == last {
                self.output.apply(tape, h)
            } else {
                tape.relu(h)
            };
        }
        Ok(h)
    }
}
