//! Occasion-aware mixture-of-experts click-through rate modeling.
//!
//! Platform-wide business signals are cut into sliding windows, turned into
//! magnitude spectra and encoded into an occasion representation `h_L`. A
//! gate scores independent expert towers against `h_L`, and a head predicts
//! the click probability from the weighted mixture of expert outputs.
//!
//! | module | contents |
//! |---|---|
//! | [`numerics`] | tensors, the reverse-mode [`Tape`](numerics::Tape), layers, Adagrad |
//! | [`signals`] | signal series, windows, FFT magnitude spectra |
//! | [`orn`] | occasion encoders: LSTM, Transformer, mean-pooled MLP |
//! | [`experts`] | feature schema, hashed embeddings, attention, MainNet and BiasNet |
//! | [`mixture`] | gate, head, model variants and the forward pass |
//! | [`synthgen`] | a synthetic world with known promotion regimes |
//! | [`harness`] | training, metrics, evaluation, checkpoints, ablations, gradient checks |
//! | [`config`] | the TOML run configuration shared with the `moef` binary |
//!
//! ```
//! use moef::harness::gradcheck::tiny_fixture;
//! use moef::mixture::{ModelConfig, ModelVariant, MoefModel};
//! use moef::numerics::ParamStore;
//! use moef::signals::SignalStats;
//!
//! let (series, records) = tiny_fixture(1);
//! let stats = SignalStats::fit(&series, 48)?;
//! let mut store = ParamStore::new();
//! let model = MoefModel::new(&mut store, &ModelConfig::tiny(ModelVariant::Full), stats, 1)?;
//! let batch: Vec<_> = records.iter().filter(|r| r.snapshot_id == 63).collect();
//! let p = model.predict(&store, &series, &batch, false)?;
//! assert!(p.y_hat.iter().all(|y| *y > 0.0 && *y < 1.0));
//! # Ok::<(), moef::MoefError>(())
//! ```

pub mod config;
pub mod error;
pub mod experts;
pub mod harness;
pub mod mixture;
pub mod numerics;
pub mod orn;
pub mod signals;
pub mod synthgen;

pub use error::{MoefError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/signals.md")]
    mod signals {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/experts.md")]
    mod experts {}
    #[doc = include_str!("../../../book/src/mixture.md")]
    mod mixture {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/world.md")]
    mod world {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
