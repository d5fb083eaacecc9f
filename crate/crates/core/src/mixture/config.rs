use serde::{Deserialize, Serialize};

use crate::error::{MoefError, Result};
use crate::experts::{ExpertConfig, FeatureSchema};
use crate::orn::{EncoderConfig, OelKind};
use crate::signals::{Normalization, WindowingConfig};

/// Which model the run builds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    #[default]
    Full,
    OneExpert,
    NoFft,
    NoLstm,
    TransformerEncoder,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::Full,
        ModelVariant::OneExpert,
        ModelVariant::NoFft,
        ModelVariant::NoLstm,
        ModelVariant::TransformerEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::OneExpert => "one_expert",
            ModelVariant::NoFft => "no_fft",
            ModelVariant::NoLstm => "no_lstm",
            ModelVariant::TransformerEncoder => "transformer_encoder",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                MoefError::Config(format!(
                    "unknown variant {s:?}; expected one of full, one_expert, no_fft, no_lstm, transformer_encoder"
                ))
            })
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    /// K. Ignored (forced to 1) for `one_expert`.
    pub num_experts: usize,
    /// Hidden width g of the gate scorer.
    pub gate_hidden: usize,
    /// Head widths, starting with the expert output width and ending in 1.
    pub head_layers: Vec<usize>,
    /// N: signal steps of history behind each snapshot.
    pub history_steps: usize,
    pub windowing: WindowingConfig,
    /// Feed `ln(1 + |X|)` instead of raw magnitudes to the encoder. Raw
    /// z-scored magnitudes put the DC bin an order of magnitude above every
    /// other bin, which saturates the LSTM gates.
    pub log_magnitudes: bool,
    pub encoder: EncoderConfig,
    pub expert: ExpertConfig,
    pub schema: FeatureSchema,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: ModelVariant::Full,
            num_experts: 2,
            gate_hidden: 64,
            head_layers: vec![144, 64, 1],
            history_steps: 96,
            windowing: WindowingConfig::default(),
            log_magnitudes: true,
            encoder: EncoderConfig::default(),
            expert: ExpertConfig::default(),
            schema: FeatureSchema::default(),
        }
    }
}

impl ModelConfig {
    /// A model small enough for exhaustive finite-difference checks: two
    /// signals over 32 steps, windows of 8 every 4 steps, 8-point FFT,
    /// `d_h = 8`, two experts and no width above 16.
    pub fn tiny(variant: ModelVariant) -> Self {
        let mut schema = FeatureSchema::tiny(1, 1, 2, 32);
        schema.max_seq_len = 4;
        Self {
            variant,
            num_experts: 2,
            gate_hidden: 4,
            head_layers: vec![6, 4, 1],
            history_steps: 32,
            windowing: WindowingConfig {
                window_size: 8,
                stride: 4,
                fft_points: 8,
                ..WindowingConfig::default()
            },
            log_magnitudes: true,
            encoder: EncoderConfig {
                kind: None,
                hidden: 8,
                transformer: crate::orn::TransformerConfig {
                    heads: 2,
                    layers: 1,
                    ff_width: 16,
                },
            },
            expert: ExpertConfig {
                attention_heads: 2,
                attention_width: 4,
                pooled_key_width: 4,
                pooled_value_width: 2,
                main_layers: vec![16, 8, 4],
                bias_layers: vec![6, 4, 2],
            },
            schema,
        }
    }

    /// [`ModelConfig::tiny`] widths over the full feature layout of
    /// generated records, with a 32-step history; pairs with
    /// [`WorldConfig::small`](crate::synthgen::WorldConfig::small).
    pub fn small(variant: ModelVariant) -> Self {
        let mut schema = FeatureSchema::tiny(5, 6, 2, 64);
        schema.max_seq_len = 4;
        let base = Self::tiny(variant);
        Self {
            expert: ExpertConfig {
                main_layers: vec![34, 8, 4],
                bias_layers: vec![24, 4, 2],
                ..base.expert.clone()
            },
            schema,
            ..base
        }
    }

    pub fn experts(&self) -> usize {
        match self.variant {
            ModelVariant::OneExpert => 1,
            _ => self.num_experts,
        }
    }

    /// The occasion encoder the variant runs.
    pub fn oel_kind(&self) -> OelKind {
        match self.variant {
            ModelVariant::NoFft | ModelVariant::NoLstm => OelKind::MlpPool,
            ModelVariant::TransformerEncoder => OelKind::TransformerEncoder,
            ModelVariant::Full | ModelVariant::OneExpert => self.encoder.kind.unwrap_or(OelKind::Lstm),
        }
    }

    /// Whether the occasion path uses log1p time-domain windows.
    pub fn time_domain(&self) -> bool {
        self.variant == ModelVariant::NoFft
    }

    /// Normalization actually applied before windowing.
    pub fn normalization(&self) -> Normalization {
        if self.time_domain() {
            Normalization::Log1p
        } else {
            self.windowing.normalization
        }
    }

    /// Width of one occasion-sequence row for `signals` signals.
    pub fn occasion_width(&self, signals: usize) -> usize {
        if self.time_domain() {
            signals * self.windowing.window_size
        } else {
            self.windowing.spectrum_width(signals)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.windowing.validate()?;
        self.expert.validate(&self.schema)?;
        if self.experts() == 0 {
            return Err(MoefError::Config("num_experts must be at least 1".into()));
        }
        if self.gate_hidden == 0 || self.encoder.hidden == 0 {
            return Err(MoefError::Config("gate_hidden and encoder.hidden must be positive".into()));
        }
        if self.history_steps < self.windowing.window_size {
            return Err(MoefError::Config(format!(
                "history_steps {} shorter than window_size {}",
                self.history_steps, self.windowing.window_size
            )));
        }
        if self.encoder.kind == Some(OelKind::MlpPool) {
            return Err(MoefError::Config(
                "encoder.kind = \"mlp_pool\" is reserved for the no_lstm and no_fft variants; set model.variant instead".into(),
            ));
        }
        let r = self.expert.output_width();
        if self.head_layers.first() != Some(&r) || self.head_layers.last() != Some(&1) || self.head_layers.len() < 2 {
            return Err(MoefError::Config(format!(
                "head_layers must run from the expert width {r} down to 1, got {:?}",
                self.head_layers
            )));
        }
        Ok(())
    }
}
