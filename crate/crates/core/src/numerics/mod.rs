//! Dense tensors, a recording tape for reverse-mode gradients, and Adagrad.

mod adagrad;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adagrad::Adagrad;
pub use layers::{Activation, Linear, Mlp};
pub use params::{uniform, xavier_uniform, ParamId, ParamStore, Parameter};
pub use tape::{
    logloss, AttentionSpec, Binary, Gradients, ParamGrad, Tape, Unary, Var, PRED_CLIP,
};
pub use tensor::Tensor;


#[cfg(test)]
mod tests;
