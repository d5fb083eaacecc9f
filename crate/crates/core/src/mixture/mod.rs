//! The occasion-gated mixture: gate, head, variants and the full forward pass.

mod config;
mod model;

pub use config::{ModelConfig, ModelVariant};
pub use model::{
    gate_scores, mix_experts, mixture_weights, moef_forward, ForwardPass, GateParams, MoefModel, OccasionPath,
    Prediction,
};
