use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, FeatureSpec};
use crate::error::{MoefError, Result};
use crate::numerics::{uniform, ParamId, ParamStore, Tape, Var};
use crate::synthgen::SampleRecord;

/// Bound of the uniform initializer for embedding rows.
pub const EMBEDDING_INIT: f64 = 0.05;

/// One table per schema feature, shared by every expert. Behavior positions
/// reuse the item-group tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTables {
    pub user: Vec<ParamId>,
    pub item: Vec<ParamId>,
    pub context: Vec<ParamId>,
}

impl EmbeddingTables {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, schema: &FeatureSchema) -> Result<Self> {
        schema.validate()?;
        let mut make = |specs: &[FeatureSpec]| -> Result<Vec<ParamId>> {
            specs
                .iter()
                .map(|f| {
                    store.add(
                        format!("emb.{}", f.name),
                        uniform(rng, &[f.buckets, f.width], EMBEDDING_INIT),
                    )
                })
                .collect()
        };
        Ok(Self {
            user: make(&schema.user)?,
            item: make(&schema.item)?,
            context: make(&schema.context)?,
        })
    }
}

/// Embedded feature groups for a batch of `batch` records.
///
/// Sequences are right-padded with zero rows to the longest sequence in the
/// batch (at least one position); `seq_mask[b * seq_len + j]` is true for
/// real behaviors.
#[derive(Clone, Debug)]
pub struct EmbeddedBatch {
    pub batch: usize,
    pub seq_len: usize,
    /// `e^u`: `[batch, user_width]`.
    pub user: Var,
    /// `e^i`: `[batch, item_width]`.
    pub item: Var,
    /// `e^c`: `[batch, context_width]`.
    pub context: Var,
    /// `[batch * seq_len, seq_width]`.
    pub seq: Var,
    pub seq_mask: Vec<bool>,
}

/// Hashes and looks up every feature of `records`. Sequences longer than
/// `schema.max_seq_len` keep their most recent behaviors.
pub fn embed(
    tape: &mut Tape,
    schema: &FeatureSchema,
    tables: &EmbeddingTables,
    records: &[&SampleRecord],
) -> Result<EmbeddedBatch> {
    if records.is_empty() {
        return Err(MoefError::Data("cannot embed an empty batch".into()));
    }
    for r in records {
        schema.check_record(r)?;
    }
    let lookup = |tape: &mut Tape, specs: &[FeatureSpec], ids: &[ParamId], value: &dyn Fn(&SampleRecord, usize) -> u64| {
        let parts = specs
            .iter()
            .zip(ids)
            .enumerate()
            .map(|(k, (spec, &table))| {
                let idx: Vec<Option<usize>> =
                    records.iter().map(|r| Some(spec.bucket(value(r, k)))).collect();
                tape.gather(table, &idx)
            })
            .collect::<Result<Vec<_>>>()?;
        tape.concat_cols(&parts)
    };
    let user = lookup(tape, &schema.user, &tables.user, &|r, k| {
        if k == 0 {
            r.user_id
        } else {
            r.profile[k - 1]
        }
    })?;
    let item = lookup(tape, &schema.item, &tables.item, &|r, k| match k {
        0 => r.item_id,
        1 => r.category_id,
        _ => r.brand_id,
    })?;
    let context = lookup(tape, &schema.context, &tables.context, &|r, k| r.context[k])?;

    let max_len = schema.max_seq_len;
    fn kept(r: &SampleRecord, max_len: usize) -> &[crate::synthgen::Behavior] {
        &r.sequence[r.sequence.len().saturating_sub(max_len)..]
    }
    let seq_len = records.iter().map(|r| kept(r, max_len).len()).max().unwrap_or(0).max(1);
    let mut seq_mask = Vec::with_capacity(records.len() * seq_len);
    for r in records {
        let n = kept(r, max_len).len();
        seq_mask.extend((0..seq_len).map(|j| j < n));
    }
    let parts = schema
        .item
        .iter()
        .zip(&tables.item)
        .enumerate()
        .map(|(k, (spec, &table))| {
            let mut idx = Vec::with_capacity(seq_mask.len());
            for r in records {
                let s = kept(r, max_len);
                for j in 0..seq_len {
                    idx.push(s.get(j).map(|b| {
                        spec.bucket(match k {
                            0 => b.item_id,
                            1 => b.category_id,
                            _ => b.brand_id,
                        })
                    }));
                }
            }
            tape.gather(table, &idx)
        })
        .collect::<Result<Vec<_>>>()?;
    let seq = tape.concat_cols(&parts)?;
    Ok(EmbeddedBatch {
        batch: records.len(),
        seq_len,
        user,
        item,
        context,
        seq,
        seq_mask,
    })
}
