//! The run configuration document read by the command-line tool.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MoefError, Result};
use crate::harness::TrainConfig;
use crate::mixture::{ModelConfig, ModelVariant};
use crate::synthgen::WorldConfig;

/// Environment variable naming the config file used when none is passed.
pub const CONFIG_ENV: &str = "MOEF_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset directory: train.tsv, validation.tsv, signals.csv, manifest.json.
    pub data_dir: PathBuf,
    /// Run directory: checkpoint, loss trace, reports and inspection exports.
    pub run_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
        }
    }
}

impl PathsConfig {
    pub fn checkpoint(&self) -> PathBuf {
        self.run_dir.join("model.ckpt")
    }

    pub fn loss_trace(&self) -> PathBuf {
        self.run_dir.join("loss_trace.csv")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.run_dir.join("eval.json")
    }

    pub fn inspection_dir(&self) -> PathBuf {
        self.run_dir.join("inspection")
    }

    pub fn ablation_report(&self) -> PathBuf {
        self.run_dir.join("ablation.md")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<ModelVariant>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: ModelVariant::ALL.to_vec(),
            seeds: vec![1, 2, 3],
        }
    }
}

/// Every setting of a run. Missing keys take their defaults; unknown keys
/// are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MoefError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MoefError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            MoefError::Config(msg) => MoefError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The fully resolved document; parsing it yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.history_steps > self.world.history_steps {
            return Err(MoefError::Config(format!(
                "model.history_steps = {} exceeds world.history_steps = {}, the history available at the first impression",
                self.model.history_steps, self.world.history_steps
            )));
        }
        if self.ablation.variants.is_empty() || self.ablation.seeds.is_empty() {
            return Err(MoefError::Config("ablation needs at least one variant and one seed".into()));
        }
        Ok(())
    }
}
