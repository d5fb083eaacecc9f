use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport};
use super::metrics::mean_std;
use super::train::{TrainConfig, TrainedModel};
use crate::error::{MoefError, Result};
use crate::mixture::{ModelConfig, ModelVariant};
use crate::signals::{OccasionSignalSeries, SignalStats};
use crate::synthgen::{AucCeiling, RegimeSchedule, SampleRecord};

/// One trained variant/seed pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: ModelVariant,
    pub seed: u64,
    pub epoch_losses: Vec<f64>,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub variant: ModelVariant,
    pub runs: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
}

/// Everything the runs share: signals, splits, statistics and the regime
/// schedule used for per-slice reporting.
pub struct AblationData<'a> {
    pub series: &'a OccasionSignalSeries,
    pub train: &'a [SampleRecord],
    pub validation: &'a [SampleRecord],
    pub stats: &'a SignalStats,
    pub schedule: &'a RegimeSchedule,
    pub ceiling: Option<&'a AucCeiling>,
}

impl AblationReport {
    /// Overall validation AUCs of `variant`, in seed order.
    pub fn aucs(&self, variant: ModelVariant) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.report.overall.auc)
            .collect()
    }

    pub fn summary(&self) -> Vec<AblationSummary> {
        let mut variants: Vec<ModelVariant> = Vec::new();
        for r in &self.runs {
            if !variants.contains(&r.variant) {
                variants.push(r.variant);
            }
        }
        variants
            .into_iter()
            .map(|variant| {
                let aucs = self.aucs(variant);
                let (auc_mean, auc_std) = mean_std(&aucs);
                AblationSummary {
                    variant,
                    runs: aucs.len(),
                    auc_mean,
                    auc_std,
                }
            })
            .collect()
    }

    /// Markdown table of mean ± standard deviation of validation AUC.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| variant | runs | AUC (mean ± std) |\n|---|---|---|\n");
        for row in self.summary() {
            writeln!(s, "| {} | {} | {:.4} ± {:.4} |", row.variant, row.runs, row.auc_mean, row.auc_std)
                .expect("write to String");
        }
        s
    }
}

/// Trains every variant once per seed on identical data and evaluates each
/// on the validation split. `on_run` sees each finished run, for progress
/// output.
pub fn run_ablation(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[ModelVariant],
    seeds: &[u64],
    data: &AblationData<'_>,
    mut on_run: impl FnMut(&AblationRun),
) -> Result<AblationReport> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(MoefError::Config("ablation needs at least one variant and one seed".into()));
    }
    let mut report = AblationReport::default();
    for &seed in seeds {
        for &variant in variants {
            let model_cfg = ModelConfig {
                variant,
                ..base.clone()
            };
            let tc = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let mut trained = TrainedModel::init(&model_cfg, &tc, data.stats.clone())?;
            let log = trained.fit(data.series, data.train, |_, _| Ok(None))?;
            let run = AblationRun {
                variant,
                seed,
                epoch_losses: log.epochs.iter().map(|e| e.mean_loss).collect(),
                report: evaluate(&trained, data.series, data.validation, data.schedule, data.ceiling)?,
            };
            on_run(&run);
            report.runs.push(run);
        }
    }
    Ok(report)
}
