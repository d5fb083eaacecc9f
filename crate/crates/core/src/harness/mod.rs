//! Training, evaluation, checkpoints, inspection exports and gradient checks.

mod ablation;
mod checkpoint;
mod eval;
pub mod gradcheck;
mod inspect;
mod metrics;
mod train;

pub use ablation::{run_ablation, AblationData, AblationReport, AblationRun, AblationSummary};
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use eval::{evaluate, evaluate_scores, EvalReport, SliceReport, CEILING_SLACK};
pub use gradcheck::{grad_check, GradCheckReport, GroupReport};
pub use inspect::{export_inspection, InspectionFiles};
pub use metrics::{auc, category_entropy, ks_statistic, mean_std};
pub use train::{
    dataset_loss, fit_signal_stats, score_records, snapshot_batches, train_step, BatchLog, EpochLog, Scores,
    TrainConfig, TrainReport, TrainedModel,
};

#[cfg(test)]
mod tests;
