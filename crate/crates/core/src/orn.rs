//! Occasion representation: encode a spectrum sequence into one vector `h_L`.
//!
//! Three encoders share the same contract, `[L, d]` rows in and a `[1, d_h]`
//! representation out:
//!
//! * [`OelKind::Lstm`] runs an LSTM over the rows from a zero state and
//!   returns the final hidden state.
//! * [`OelKind::TransformerEncoder`] projects rows to `d_h`, adds sinusoidal
//!   positions, applies post-norm self-attention blocks and reads out the
//!   last position.
//! * [`OelKind::MlpPool`] averages rows and applies a two-layer perceptron;
//!   it ignores row order entirely.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MoefError, Result};
use crate::numerics::{
    xavier_uniform, Activation, AttentionSpec, Linear, Mlp, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::signals::SpectrumSequence;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OelKind {
    #[default]
    Lstm,
    TransformerEncoder,
    MlpPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub heads: usize,
    pub layers: usize,
    /// Feed-forward width; 0 means twice the hidden size.
    pub ff_width: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            layers: 1,
            ff_width: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Left unset, the model variant picks the encoder.
    pub kind: Option<OelKind>,
    /// Hidden size d_h.
    pub hidden: usize,
    pub transformer: TransformerConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: None,
            hidden: 96,
            transformer: TransformerConfig::default(),
        }
    }
}

/// The occasion vector `h_L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccasionRepresentation(pub Vec<f64>);

/// Gate weights for input, forget, output and candidate cell, in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input: [ParamId; 4],
    pub hidden: [ParamId; 4],
    pub bias: [ParamId; 4],
    pub in_width: usize,
    pub hidden_width: usize,
}

const GATES: [&str; 4] = ["i", "f", "o", "c"];

impl LstmParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_width: usize,
        hidden_width: usize,
    ) -> Result<Self> {
        let mut input = Vec::new();
        let mut hidden = Vec::new();
        let mut bias = Vec::new();
        for g in GATES {
            input.push(store.add(format!("{name}.w1_{g}"), xavier_uniform(rng, hidden_width, in_width))?);
            hidden.push(store.add(
                format!("{name}.w2_{g}"),
                xavier_uniform(rng, hidden_width, hidden_width),
            )?);
            let init = if g == "f" { 1.0 } else { 0.0 };
            bias.push(store.add(format!("{name}.b_{g}"), Tensor::filled(&[hidden_width], init))?);
        }
        Ok(Self {
            input: input.try_into().expect("four gates"),
            hidden: hidden.try_into().expect("four gates"),
            bias: bias.try_into().expect("four gates"),
            in_width,
            hidden_width,
        })
    }
}

/// Output of one LSTM step, with the gate activations kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct LstmStep {
    pub h: Var,
    pub c: Var,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
    pub candidate: Var,
}

/// One LSTM step on `[1, d]` input with `[1, d_h]` state:
///
/// ```text
/// i = σ(W¹ᵢx + W²ᵢh + bᵢ)    f = σ(W¹_f x + W²_f h + b_f)    o = σ(W¹ₒx + W²ₒh + bₒ)
/// c' = f ⊙ c + i ⊙ tanh(W¹_c x + W²_c h + b_c)
/// h' = o ⊙ tanh(c')
/// ```
pub fn lstm_step(tape: &mut Tape, p: &LstmParams, x: Var, h: Var, c: Var) -> Result<LstmStep> {
    if tape.value(x).dims2().1 != p.in_width {
        return Err(MoefError::dim(format!(
            "LSTM input {:?} does not match width {}",
            tape.shape(x),
            p.in_width
        )));
    }
    if tape.value(h).dims2().1 != p.hidden_width || tape.value(c).dims2().1 != p.hidden_width {
        return Err(MoefError::dim(format!(
            "LSTM state {:?}/{:?} does not match hidden width {}",
            tape.shape(h),
            tape.shape(c),
            p.hidden_width
        )));
    }
    let mut pre = Vec::with_capacity(4);
    for g in 0..4 {
        let w1 = tape.param(p.input[g]);
        let w2 = tape.param(p.hidden[g]);
        let b = tape.param(p.bias[g]);
        let xi = tape.matmul_t(x, w1)?;
        let hi = tape.matmul_t(h, w2)?;
        let s = tape.add(xi, hi)?;
        pre.push(tape.add_row(s, b)?);
    }
    let i = tape.sigmoid(pre[0]);
    let f = tape.sigmoid(pre[1]);
    let o = tape.sigmoid(pre[2]);
    let g = tape.tanh(pre[3]);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok(LstmStep {
        h: h_next,
        c: c_next,
        input_gate: i,
        forget_gate: f,
        output_gate: o,
        candidate: g,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerBlock {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub out: Linear,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub ff: Mlp,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    pub input: Linear,
    pub blocks: Vec<TransformerBlock>,
    pub heads: usize,
}

/// Sinusoidal position table `[len, width]`.
pub fn sinusoidal_positions(len: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; len * width];
    for pos in 0..len {
        for j in 0..width {
            let rate = 1.0 / 10_000f64.powf((2 * (j / 2)) as f64 / width as f64);
            let angle = pos as f64 * rate;
            data[pos * width + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, width], data).expect("consistent shape")
}

/// A trained-parameter view of one occasion encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OccasionEncoder {
    Lstm(LstmParams),
    Transformer(TransformerParams),
    MlpPool(Mlp),
}

impl OccasionEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        kind: OelKind,
        in_width: usize,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        let d_h = cfg.hidden;
        if d_h == 0 || in_width == 0 {
            return Err(MoefError::Config("encoder widths must be positive".into()));
        }
        Ok(match kind {
            OelKind::Lstm => Self::Lstm(LstmParams::new(store, rng, "orn.lstm", in_width, d_h)?),
            OelKind::MlpPool => Self::MlpPool(Mlp::new(
                store,
                rng,
                "orn.mlp",
                &[in_width, d_h, d_h],
                Activation::Tanh,
            )?),
            OelKind::TransformerEncoder => {
                let tc = &cfg.transformer;
                if tc.heads == 0 || d_h % tc.heads != 0 || tc.layers == 0 {
                    return Err(MoefError::Config(format!(
                        "transformer needs layers >= 1 and hidden {d_h} divisible by {} heads",
                        tc.heads
                    )));
                }
                let ff = if tc.ff_width == 0 { 2 * d_h } else { tc.ff_width };
                let input = Linear::new(store, rng, "orn.te.input", in_width, d_h)?;
                let mut blocks = Vec::new();
                for l in 0..tc.layers {
                    let n = format!("orn.te.block{l}");
                    blocks.push(TransformerBlock {
                        query: store.add(format!("{n}.wq"), xavier_uniform(rng, d_h, d_h))?,
                        key: store.add(format!("{n}.wk"), xavier_uniform(rng, d_h, d_h))?,
                        value: store.add(format!("{n}.wv"), xavier_uniform(rng, d_h, d_h))?,
                        out: Linear::new(store, rng, &format!("{n}.wo"), d_h, d_h)?,
                        norm1_gain: store.add(format!("{n}.ln1.g"), Tensor::filled(&[d_h], 1.0))?,
                        norm1_bias: store.add(format!("{n}.ln1.b"), Tensor::zeros(&[d_h]))?,
                        ff: Mlp::new(store, rng, &format!("{n}.ff"), &[d_h, ff, d_h], Activation::Identity)?,
                        norm2_gain: store.add(format!("{n}.ln2.g"), Tensor::filled(&[d_h], 1.0))?,
                        norm2_bias: store.add(format!("{n}.ln2.b"), Tensor::zeros(&[d_h]))?,
                    });
                }
                Self::Transformer(TransformerParams {
                    input,
                    blocks,
                    heads: tc.heads,
                })
            }
        })
    }

    pub fn kind(&self) -> OelKind {
        match self {
            Self::Lstm(_) => OelKind::Lstm,
            Self::Transformer(_) => OelKind::TransformerEncoder,
            Self::MlpPool(_) => OelKind::MlpPool,
        }
    }

    pub fn in_width(&self) -> usize {
        match self {
            Self::Lstm(p) => p.in_width,
            Self::Transformer(p) => p.input.in_width,
            Self::MlpPool(m) => m.in_width(),
        }
    }

    pub fn hidden_width(&self) -> usize {
        match self {
            Self::Lstm(p) => p.hidden_width,
            Self::Transformer(p) => p.input.out_width,
            Self::MlpPool(m) => m.out_width(),
        }
    }

    /// Encodes `[L, d]` rows into a `[1, d_h]` representation.
    pub fn forward(&self, tape: &mut Tape, rows: Var) -> Result<Var> {
        let shape = tape.shape(rows).to_vec();
        if shape.len() != 2 || shape[1] != self.in_width() {
            return Err(MoefError::dim(format!(
                "occasion sequence {shape:?} does not match encoder width {}",
                self.in_width()
            )));
        }
        let len = shape[0];
        match self {
            Self::Lstm(p) => {
                let zeros = Tensor::zeros(&[1, p.hidden_width]);
                let mut h = tape.constant(zeros.clone());
                let mut c = tape.constant(zeros);
                for t in 0..len {
                    let x = tape.select_rows(rows, &[t])?;
                    let step = lstm_step(tape, p, x, h, c)?;
                    h = step.h;
                    c = step.c;
                }
                Ok(h)
            }
            Self::MlpPool(mlp) => {
                let pooled = tape.mean_rows(rows)?;
                mlp.forward(tape, pooled)
            }
            Self::Transformer(p) => {
                let d_h = p.input.out_width;
                let x = p.input.forward(tape, rows)?;
                let pos = tape.constant(sinusoidal_positions(len, d_h));
                let mut x = tape.add(x, pos)?;
                for block in &p.blocks {
                    x = transformer_block(tape, block, p.heads, x, len)?;
                }
                tape.select_rows(x, &[len - 1])
            }
        }
    }

    /// Convenience: encode a spectrum sequence with frozen parameters.
    pub fn encode(&self, store: &ParamStore, seq: &SpectrumSequence) -> Result<OccasionRepresentation> {
        if seq.is_empty() {
            return Err(MoefError::InsufficientHistory {
                needed: 1,
                available: 0,
            });
        }
        let mut tape = Tape::with_params(store);
        let rows = tape.constant(seq.to_tensor()?);
        let h = self.forward(&mut tape, rows)?;
        Ok(OccasionRepresentation(tape.value(h).data().to_vec()))
    }
}

fn transformer_block(tape: &mut Tape, b: &TransformerBlock, heads: usize, x: Var, len: usize) -> Result<Var> {
    let (wq, wk, wv) = (tape.param(b.query), tape.param(b.key), tape.param(b.value));
    let q = tape.matmul_t(x, wq)?;
    let k = tape.matmul_t(x, wk)?;
    let v = tape.matmul_t(x, wv)?;
    let spec = AttentionSpec {
        batch: 1,
        heads,
        q_len: len,
        k_len: len,
        key_mask: None,
        query_mask: None,
    };
    let attended = tape.attention(q, k, v, spec)?;
    let attended = b.out.forward(tape, attended)?;
    let x = tape.add(x, attended)?;
    let x = affine_norm(tape, x, b.norm1_gain, b.norm1_bias)?;
    let ff = b.ff.forward(tape, x)?;
    let x = tape.add(x, ff)?;
    affine_norm(tape, x, b.norm2_gain, b.norm2_bias)
}

fn affine_norm(tape: &mut Tape, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
    let n = tape.layer_norm(x)?;
    let g = tape.param(gain);
    let b = tape.param(bias);
    let scaled = tape.mul_row(n, g)?;
    tape.add_row(scaled, b)
}
