use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embed::EmbeddedBatch;
use super::schema::FeatureSchema;
use crate::error::{MoefError, Result};
use crate::numerics::{xavier_uniform, Activation, AttentionSpec, Mlp, ParamId, ParamStore, Tape, Var};

/// Widths of one expert.
///
/// `main_layers` and `bias_layers` start with the input width, which must
/// equal `2 * pooled_value_width + item + user + context` and
/// `user + context` respectively.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    pub attention_heads: usize,
    pub attention_width: usize,
    pub pooled_key_width: usize,
    pub pooled_value_width: usize,
    pub main_layers: Vec<usize>,
    pub bias_layers: Vec<usize>,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            attention_heads: 8,
            attention_width: 128,
            pooled_key_width: 128,
            pooled_value_width: 144,
            main_layers: vec![480, 256, 128],
            bias_layers: vec![96, 32, 16],
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if self.attention_heads == 0 || self.attention_width % self.attention_heads != 0 {
            return Err(MoefError::Config(format!(
                "attention_width {} must be a positive multiple of attention_heads {}",
                self.attention_width, self.attention_heads
            )));
        }
        if self.pooled_key_width == 0 || self.pooled_value_width == 0 {
            return Err(MoefError::Config("pooled attention widths must be positive".into()));
        }
        let main_in = 2 * self.pooled_value_width
            + schema.item_width()
            + schema.user_width()
            + schema.context_width();
        if self.main_layers.first() != Some(&main_in) {
            return Err(MoefError::Config(format!(
                "main_layers must start with {main_in} (2 x {} pooled + {} item + {} user + {} context), got {:?}",
                self.pooled_value_width,
                schema.item_width(),
                schema.user_width(),
                schema.context_width(),
                self.main_layers
            )));
        }
        let bias_in = schema.user_width() + schema.context_width();
        if self.bias_layers.first() != Some(&bias_in) {
            return Err(MoefError::Config(format!(
                "bias_layers must start with {bias_in} (user + context), got {:?}",
                self.bias_layers
            )));
        }
        Ok(())
    }

    /// Width of an expert output `r_k`.
    pub fn output_width(&self) -> usize {
        self.main_layers.last().copied().unwrap_or(0) + self.bias_layers.last().copied().unwrap_or(0)
    }
}

/// Query, key and value projections (`[out, in]`, no bias).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projections {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    pub heads: usize,
    pub self_attention: Projections,
    pub user_pool: Projections,
    pub item_pool: Projections,
    pub main: Mlp,
    pub bias: Mlp,
}

impl ExpertParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        schema: &FeatureSchema,
        cfg: &ExpertConfig,
    ) -> Result<Self> {
        cfg.validate(schema)?;
        let mut proj = |sub: &str, q_in: usize, kv_in: usize, k_out: usize, v_out: usize| -> Result<Projections> {
            Ok(Projections {
                query: store.add(format!("{name}.{sub}.wq"), xavier_uniform(rng, k_out, q_in))?,
                key: store.add(format!("{name}.{sub}.wk"), xavier_uniform(rng, k_out, kv_in))?,
                value: store.add(format!("{name}.{sub}.wv"), xavier_uniform(rng, v_out, kv_in))?,
            })
        };
        let d_s = schema.seq_width();
        let d_a = cfg.attention_width;
        let self_attention = proj("sa", d_s, d_s, d_a, d_a)?;
        let user_pool = proj("pu", schema.user_width(), d_a, cfg.pooled_key_width, cfg.pooled_value_width)?;
        let item_pool = proj("pi", schema.item_width(), d_a, cfg.pooled_key_width, cfg.pooled_value_width)?;
        let main = Mlp::new(store, rng, &format!("{name}.main"), &cfg.main_layers, Activation::Identity)?;
        let bias = Mlp::new(store, rng, &format!("{name}.bias"), &cfg.bias_layers, Activation::Identity)?;
        Ok(Self {
            heads: cfg.attention_heads,
            self_attention,
            user_pool,
            item_pool,
            main,
            bias,
        })
    }

    pub fn output_width(&self) -> usize {
        self.main.out_width() + self.bias.out_width()
    }
}

/// Multi-head self-attention over each record's behavior sequence.
///
/// Padded positions are excluded as keys and produce zero rows, so the
/// result at real positions equals running on the unpadded sequence.
/// Returns `[batch * seq_len, attention_width]`.
pub fn seq_self_attention(tape: &mut Tape, p: &ExpertParams, e: &EmbeddedBatch) -> Result<Var> {
    let (wq, wk, wv) = (
        tape.param(p.self_attention.query),
        tape.param(p.self_attention.key),
        tape.param(p.self_attention.value),
    );
    let q = tape.matmul_t(e.seq, wq)?;
    let k = tape.matmul_t(e.seq, wk)?;
    let v = tape.matmul_t(e.seq, wv)?;
    tape.attention(
        q,
        k,
        v,
        AttentionSpec {
            batch: e.batch,
            heads: p.heads,
            q_len: e.seq_len,
            k_len: e.seq_len,
            key_mask: Some(e.seq_mask.clone()),
            query_mask: Some(e.seq_mask.clone()),
        },
    )
}

/// Attention pooling of `seq` (`[batch * seq_len, d]`) under one query row
/// per record. Records without behaviors pool to zeros. The result does not
/// depend on the order of the real positions.
pub fn pooled_attention(
    tape: &mut Tape,
    proj: &Projections,
    query: Var,
    seq: Var,
    mask: &[bool],
    batch: usize,
    seq_len: usize,
) -> Result<Var> {
    let (wq, wk, wv) = (tape.param(proj.query), tape.param(proj.key), tape.param(proj.value));
    let q = tape.matmul_t(query, wq)?;
    let k = tape.matmul_t(seq, wk)?;
    let v = tape.matmul_t(seq, wv)?;
    tape.attention(
        q,
        k,
        v,
        AttentionSpec {
            batch,
            heads: 1,
            q_len: 1,
            k_len: seq_len,
            key_mask: Some(mask.to_vec()),
            query_mask: None,
        },
    )
}

/// The two halves of an expert output.
#[derive(Clone, Copy, Debug)]
pub struct ExpertOutput {
    /// `[batch, main_out + bias_out]`.
    pub combined: Var,
    pub main: Var,
    pub bias: Var,
}

/// Runs one expert: sequence self-attention, user- and item-queried pooling,
/// then MainNet on everything and BiasNet on user and context only.
pub fn expert_forward(tape: &mut Tape, p: &ExpertParams, e: &EmbeddedBatch) -> Result<ExpertOutput> {
    let attended = seq_self_attention(tape, p, e)?;
    let a_u = pooled_attention(tape, &p.user_pool, e.user, attended, &e.seq_mask, e.batch, e.seq_len)?;
    let a_i = pooled_attention(tape, &p.item_pool, e.item, attended, &e.seq_mask, e.batch, e.seq_len)?;
    let main_in = tape.concat_cols(&[a_u, a_i, e.item, e.user, e.context])?;
    let main = p.main.forward(tape, main_in)?;
    let bias_in = tape.concat_cols(&[e.user, e.context])?;
    let bias = p.bias.forward(tape, bias_in)?;
    let combined = tape.concat_cols(&[main, bias])?;
    Ok(ExpertOutput { combined, main, bias })
}
