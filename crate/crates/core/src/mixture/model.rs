use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{MoefError, Result};
use crate::experts::{embed, expert_forward, EmbeddingTables, ExpertOutput, ExpertParams};
use crate::numerics::{xavier_uniform, Activation, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::orn::OccasionEncoder;
use crate::signals::{
    build_spectrum_sequence, build_time_domain_sequence, Normalization, OccasionSignalSeries, SignalStats,
    SpectrumSequence, WindowingConfig,
};
use crate::synthgen::SampleRecord;

/// Shared expert scorer `f_g(h, r) = wᵀ tanh(W_h h + W_r r + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w_h: ParamId,
    pub w_r: ParamId,
    pub bias: ParamId,
    pub readout: ParamId,
}

impl GateParams {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, hidden: usize, occasion: usize, expert: usize) -> Result<Self> {
        Ok(Self {
            w_h: store.add("gate.wh", xavier_uniform(rng, hidden, occasion))?,
            w_r: store.add("gate.wr", xavier_uniform(rng, hidden, expert))?,
            bias: store.add("gate.b", Tensor::zeros(&[hidden]))?,
            readout: store.add("gate.w", xavier_uniform(rng, 1, hidden))?,
        })
    }
}

/// Gate scores `[batch, K]` before the softmax.
///
/// `occasions` holds one `h_L` row per distinct snapshot and `index[b]`
/// picks the row for sample `b`.
pub fn gate_scores(
    tape: &mut Tape,
    gate: &GateParams,
    occasions: Var,
    index: &[usize],
    experts: &[Var],
) -> Result<Var> {
    if experts.is_empty() {
        return Err(MoefError::Config("the gate needs at least one expert".into()));
    }
    let (w_h, w_r, b, w) = (
        tape.param(gate.w_h),
        tape.param(gate.w_r),
        tape.param(gate.bias),
        tape.param(gate.readout),
    );
    let projected = tape.matmul_t(occasions, w_h)?;
    let per_sample = tape.select_rows(projected, index)?;
    let shared = tape.add_row(per_sample, b)?;
    let scores = experts
        .iter()
        .map(|&r| {
            let pr = tape.matmul_t(r, w_r)?;
            let pre = tape.add(shared, pr)?;
            let z = tape.tanh(pre);
            tape.matmul_t(z, w)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat_cols(&scores)
}

/// `α = softmax_k f_g(h_L, r_k)`, shape `[batch, K]`.
pub fn mixture_weights(
    tape: &mut Tape,
    gate: &GateParams,
    occasions: Var,
    index: &[usize],
    experts: &[Var],
) -> Result<Var> {
    let scores = gate_scores(tape, gate, occasions, index, experts)?;
    tape.softmax(scores, 1)
}

/// `Σ_k α_k r_k` for `α: [batch, K]`.
pub fn mix_experts(tape: &mut Tape, alpha: Var, experts: &[Var]) -> Result<Var> {
    let mut mix: Option<Var> = None;
    for (k, &r) in experts.iter().enumerate() {
        let a = tape.slice_cols(alpha, k, 1)?;
        let term = tape.mul_col(r, a)?;
        mix = Some(match mix {
            None => term,
            Some(m) => tape.add(m, term)?,
        });
    }
    mix.ok_or_else(|| MoefError::Config("no experts to mix".into()))
}

/// Occasion encoder and gate; absent when the model has a single expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccasionPath {
    pub encoder: OccasionEncoder,
    pub gate: GateParams,
}

/// A built model: its configuration, parameter handles and the signal
/// statistics its occasion path normalizes with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoefModel {
    pub config: ModelConfig,
    pub stats: SignalStats,
    pub embeddings: EmbeddingTables,
    pub experts: Vec<ExpertParams>,
    pub occasion: Option<OccasionPath>,
    pub head: Mlp,
}

impl MoefModel {
    /// Registers every parameter in `store` in a fixed order, so the same
    /// config, stats and seed always produce the same layout and values.
    pub fn new(store: &mut ParamStore, config: &ModelConfig, stats: SignalStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let signals = stats.mean.len();
        if signals == 0 || stats.std.len() != signals {
            return Err(MoefError::Config("signal statistics must cover at least one signal".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = EmbeddingTables::new(store, &mut rng, &config.schema)?;
        let experts = (0..config.experts())
            .map(|k| ExpertParams::new(store, &mut rng, &format!("expert{k}"), &config.schema, &config.expert))
            .collect::<Result<Vec<_>>>()?;
        let occasion = if config.experts() > 1 {
            let encoder = OccasionEncoder::new(
                store,
                &mut rng,
                config.oel_kind(),
                config.occasion_width(signals),
                &config.encoder,
            )?;
            let gate = GateParams::new(
                store,
                &mut rng,
                config.gate_hidden,
                config.encoder.hidden,
                config.expert.output_width(),
            )?;
            Some(OccasionPath { encoder, gate })
        } else {
            None
        };
        let head = Mlp::new(store, &mut rng, "head", &config.head_layers, Activation::Sigmoid)?;
        Ok(Self {
            config: config.clone(),
            stats,
            embeddings,
            experts,
            occasion,
            head,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn num_signals(&self) -> usize {
        self.stats.mean.len()
    }

    /// The occasion input rows for the snapshot at column `snapshot`:
    /// a spectrum sequence, or log1p time-domain windows for `no_fft`.
    pub fn occasion_sequence(&self, series: &OccasionSignalSeries, snapshot: u64, timestamp: i64) -> Result<SpectrumSequence> {
        if series.num_signals() != self.num_signals() {
            return Err(MoefError::Data(format!(
                "signal series has {} signals, model expects {}",
                series.num_signals(),
                self.num_signals()
            )));
        }
        let missing = || {
            MoefError::Data(format!(
                "no signal snapshot {snapshot} with {} steps of history for the sample at timestamp {timestamp}",
                self.config.history_steps
            ))
        };
        let col = usize::try_from(snapshot).map_err(|_| missing())?;
        if col >= series.num_steps() || col + 1 < self.config.history_steps {
            return Err(missing());
        }
        let history = series.history(col, self.config.history_steps)?;
        if self.config.time_domain() {
            build_time_domain_sequence(&history, &self.config.windowing)
        } else {
            let windowing = WindowingConfig {
                normalization: self.config.normalization(),
                ..self.config.windowing.clone()
            };
            let stats = match windowing.normalization {
                Normalization::Zscore => self.stats.clone(),
                _ => SignalStats::identity(self.num_signals()),
            };
            let spectra = build_spectrum_sequence(&history, &windowing, &stats)?;
            if !self.config.log_magnitudes {
                return Ok(spectra);
            }
            let values = spectra.values().iter().map(|v| v.ln_1p()).collect();
            SpectrumSequence::new(values, spectra.width(), spectra.window_starts().to_vec())
        }
    }

    /// `h_L` for one snapshot, or `None` for a single-expert model.
    pub fn occasion_representation(
        &self,
        store: &ParamStore,
        series: &OccasionSignalSeries,
        snapshot: u64,
    ) -> Result<Option<Vec<f64>>> {
        let Some(path) = &self.occasion else {
            return Ok(None);
        };
        let seq = self.occasion_sequence(series, snapshot, series.timestamp_of(snapshot as usize))?;
        Ok(Some(path.encoder.encode(store, &seq)?.0))
    }

    /// Runs the model on `records` and returns plain values.
    pub fn predict(
        &self,
        store: &ParamStore,
        series: &OccasionSignalSeries,
        records: &[&SampleRecord],
        keep_experts: bool,
    ) -> Result<Prediction> {
        let mut tape = Tape::with_params(store);
        let pass = moef_forward(&mut tape, self, series, records)?;
        let batch = records.len();
        let k = self.num_experts();
        let alpha = match pass.alpha {
            Some(a) => tape.value(a).data().chunks(k).map(<[f64]>::to_vec).collect(),
            None => vec![vec![1.0]; batch],
        };
        let experts = keep_experts.then(|| {
            pass.experts
                .iter()
                .map(|e| tape.value(e.combined).clone())
                .collect()
        });
        Ok(Prediction {
            y_hat: tape.value(pass.pred).data().to_vec(),
            alpha,
            experts,
        })
    }
}

/// Plain-value model output for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// ŷ per sample, in (0, 1).
    pub y_hat: Vec<f64>,
    /// One row of K gate weights per sample.
    pub alpha: Vec<Vec<f64>>,
    /// Per-expert `[batch, width]` outputs `r_k`, when requested.
    pub experts: Option<Vec<Tensor>>,
}

/// Taped handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `[batch, 1]` click probabilities.
    pub pred: Var,
    /// `[batch, K]`, absent for single-expert models.
    pub alpha: Option<Var>,
    pub experts: Vec<ExpertOutput>,
    /// `[snapshots, d_h]`, one row per entry of `snapshots`.
    pub occasions: Option<Var>,
    pub snapshots: Vec<u64>,
}

/// The full model on one batch. Each distinct snapshot in the batch is
/// encoded once and its `h_L` shared by every sample bound to it.
pub fn moef_forward(
    tape: &mut Tape,
    model: &MoefModel,
    series: &OccasionSignalSeries,
    records: &[&SampleRecord],
) -> Result<ForwardPass> {
    let embedded = embed(tape, &model.config.schema, &model.embeddings, records)?;
    let experts = model
        .experts
        .iter()
        .map(|p| expert_forward(tape, p, &embedded))
        .collect::<Result<Vec<_>>>()?;
    let rs: Vec<Var> = experts.iter().map(|e| e.combined).collect();

    let mut snapshots: BTreeMap<u64, i64> = BTreeMap::new();
    for r in records {
        snapshots.entry(r.snapshot_id).or_insert(r.timestamp);
    }
    let order: Vec<u64> = snapshots.keys().copied().collect();

    let (mix, alpha, occasions) = match &model.occasion {
        None => (rs[0], None, None),
        Some(path) => {
            let mut rows = Vec::with_capacity(order.len());
            for &snap in &order {
                let seq = model.occasion_sequence(series, snap, snapshots[&snap])?;
                let x = tape.constant(seq.to_tensor()?);
                rows.push(path.encoder.forward(tape, x)?);
            }
            let h = if rows.len() == 1 {
                rows[0]
            } else {
                let flat = tape.concat_cols(&rows)?;
                tape.reshape(flat, vec![rows.len(), model.config.encoder.hidden])?
            };
            let index: Vec<usize> = records
                .iter()
                .map(|r| order.binary_search(&r.snapshot_id).expect("snapshot collected above"))
                .collect();
            let alpha = mixture_weights(tape, &path.gate, h, &index, &rs)?;
            (mix_experts(tape, alpha, &rs)?, Some(alpha), Some(h))
        }
    };
    let pred = model.head.forward(tape, mix)?;
    if !tape.value(pred).is_finite() {
        return Err(MoefError::Numeric("non-finite prediction in forward pass".into()));
    }
    Ok(ForwardPass {
        pred,
        alpha,
        experts,
        occasions,
        snapshots: order,
    })
}
