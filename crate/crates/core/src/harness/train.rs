use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MoefError, Result};
use crate::mixture::{moef_forward, ModelConfig, MoefModel};
use crate::numerics::{logloss, Adagrad, ParamStore, Tape};
use crate::signals::{OccasionSignalSeries, SignalStats};
use crate::synthgen::SampleRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds parameter initialization and the per-epoch shuffles.
    pub seed: u64,
    /// Evaluate on the validation split every this many epochs (0: never
    /// during training).
    pub eval_every: usize,
    pub adagrad_epsilon: f64,
    /// Compute the full training-set logloss before and after training.
    pub full_loss_passes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 256,
            epochs: 1,
            seed: 1,
            eval_every: 0,
            adagrad_epsilon: Adagrad::DEFAULT_EPSILON,
            full_loss_passes: true,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MoefError::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(MoefError::Config(format!(
                "train.learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.adagrad_epsilon >= 0.0) {
            return Err(MoefError::Config("train.adagrad_epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// Splits `records` into batches that never mix signal snapshots.
///
/// Snapshot groups keep their order of first appearance; with `rng` the
/// records inside each group are shuffled before chunking.
pub fn snapshot_batches(records: &[SampleRecord], batch_size: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<u64, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let g = *slot.entry(r.snapshot_id).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    if let Some(rng) = rng {
        for g in &mut groups {
            g.shuffle(rng);
        }
    }
    groups
        .into_iter()
        .flat_map(|g| g.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect()
}

/// One optimizer step's record in the loss trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub epoch: usize,
    pub batch: usize,
    pub samples: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses seen during the epoch.
    pub mean_loss: f64,
    pub batches: usize,
    /// Validation AUC when evaluated after this epoch.
    pub validation_auc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub batches: Vec<BatchLog>,
    pub epochs: Vec<EpochLog>,
    /// Full training-set logloss before the first step.
    pub initial_loss: Option<f64>,
    /// Full training-set logloss after the last step.
    pub final_loss: Option<f64>,
}

impl TrainReport {
    /// The loss trace as CSV: `epoch,batch,samples,loss`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,batch,samples,loss\n");
        for b in &self.batches {
            s.push_str(&format!("{},{},{},{}\n", b.epoch, b.batch, b.samples, b.loss));
        }
        s
    }
}

/// Mean logloss of the model over `records`, forward only.
pub fn dataset_loss(
    model: &MoefModel,
    store: &ParamStore,
    series: &OccasionSignalSeries,
    records: &[SampleRecord],
    batch_size: usize,
) -> Result<f64> {
    let scores = score_records(model, store, series, records, batch_size)?;
    let labels: Vec<f64> = records.iter().map(|r| f64::from(r.label)).collect();
    logloss(&labels, &scores.y_hat)
}

/// Per-record predictions in input order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scores {
    pub y_hat: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
}

/// Scores `records` in snapshot-homogeneous batches and restores input order.
pub fn score_records(
    model: &MoefModel,
    store: &ParamStore,
    series: &OccasionSignalSeries,
    records: &[SampleRecord],
    batch_size: usize,
) -> Result<Scores> {
    let mut y_hat = vec![0.0; records.len()];
    let mut alpha = vec![Vec::new(); records.len()];
    for batch in snapshot_batches(records, batch_size, None) {
        let refs: Vec<&SampleRecord> = batch.iter().map(|&i| &records[i]).collect();
        let p = model.predict(store, series, &refs, false)?;
        for (j, &i) in batch.iter().enumerate() {
            y_hat[i] = p.y_hat[j];
            alpha[i] = p.alpha[j].clone();
        }
    }
    Ok(Scores { y_hat, alpha })
}

/// One Adagrad step on a batch; returns the batch loss.
pub fn train_step(
    model: &MoefModel,
    store: &mut ParamStore,
    optimizer: &mut Adagrad,
    series: &OccasionSignalSeries,
    batch: &[&SampleRecord],
) -> Result<f64> {
    let labels: Vec<f64> = batch.iter().map(|r| f64::from(r.label)).collect();
    let (loss, grads) = {
        let mut tape = Tape::with_params(store);
        let pass = moef_forward(&mut tape, model, series, batch)?;
        let loss = tape.logloss(pass.pred, &labels)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(MoefError::Numeric(format!("batch loss is {value}")));
        }
        (value, tape.backward(loss)?)
    };
    optimizer.step(store, &grads)?;
    Ok(loss)
}

/// Statistics for z-scoring: signal columns up to the latest training snapshot.
pub fn fit_signal_stats(series: &OccasionSignalSeries, train: &[SampleRecord]) -> Result<SignalStats> {
    let end = train
        .iter()
        .map(|r| r.snapshot_id as usize + 1)
        .max()
        .ok_or_else(|| MoefError::Data("training set is empty".into()))?;
    SignalStats::fit(series, end)
}

/// A model with its parameters and optimizer state.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: MoefModel,
    pub store: ParamStore,
    pub optimizer: Adagrad,
    pub train: TrainConfig,
}

impl TrainedModel {
    /// A fresh model for `model_cfg`, seeded from `train.seed`.
    pub fn init(model_cfg: &ModelConfig, train: &TrainConfig, stats: SignalStats) -> Result<Self> {
        train.validate()?;
        let mut store = ParamStore::new();
        let model = MoefModel::new(&mut store, model_cfg, stats, train.seed)?;
        let optimizer = Adagrad::new(train.learning_rate, train.adagrad_epsilon, &store);
        Ok(Self {
            model,
            store,
            optimizer,
            train: train.clone(),
        })
    }

    /// Runs `train.epochs` epochs over `records`. `on_epoch` is called after
    /// every epoch and may return a validation AUC for the log.
    pub fn fit(
        &mut self,
        series: &OccasionSignalSeries,
        records: &[SampleRecord],
        mut on_epoch: impl FnMut(usize, &TrainedModel) -> Result<Option<f64>>,
    ) -> Result<TrainReport> {
        if records.is_empty() {
            return Err(MoefError::Data("training set is empty".into()));
        }
        let cfg = self.train.clone();
        let mut report = TrainReport::default();
        if cfg.full_loss_passes {
            report.initial_loss = Some(dataset_loss(&self.model, &self.store, series, records, cfg.batch_size)?);
        }
        for epoch in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64).wrapping_mul(0x9e37_79b9));
            let batches = snapshot_batches(records, cfg.batch_size, Some(&mut rng));
            let (mut total, mut seen) = (0.0, 0usize);
            for (b, batch) in batches.iter().enumerate() {
                let refs: Vec<&SampleRecord> = batch.iter().map(|&i| &records[i]).collect();
                let loss = train_step(&self.model, &mut self.store, &mut self.optimizer, series, &refs)?;
                total += loss * refs.len() as f64;
                seen += refs.len();
                report.batches.push(BatchLog {
                    epoch,
                    batch: b,
                    samples: refs.len(),
                    loss,
                });
            }
            let validation_auc = on_epoch(epoch, self)?;
            report.epochs.push(EpochLog {
                epoch,
                mean_loss: total / seen as f64,
                batches: batches.len(),
                validation_auc,
            });
        }
        if cfg.full_loss_passes {
            report.final_loss = Some(dataset_loss(&self.model, &self.store, series, records, cfg.batch_size)?);
        }
        Ok(report)
    }
}
