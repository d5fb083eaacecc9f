//! Central finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MoefError, Result};
use crate::mixture::{moef_forward, ModelConfig, ModelVariant, MoefModel};
use crate::numerics::{ParamGrad, ParamStore, Tape, Var};
use crate::signals::{OccasionSignalSeries, SignalStats};
use crate::synthgen::{Behavior, SampleRecord};

/// Denominator floor for relative errors: `|a − n| / max(|a|, |n|, floor)`.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Every parameter in the group is frozen.
    pub skipped: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups
            .iter()
            .filter(|g| !g.skipped)
            .map(|g| g.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.groups.iter().all(|g| g.skipped || g.max_rel_error < tol)
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        for g in &other.groups {
            match self.groups.iter_mut().find(|x| x.group == g.group) {
                Some(x) => {
                    x.max_rel_error = x.max_rel_error.max(g.max_rel_error);
                    x.coordinates += g.coordinates;
                    x.skipped &= g.skipped;
                }
                None => self.groups.push(g.clone()),
            }
        }
    }
}

/// Compares reverse-mode gradients of `loss` against central differences
/// with step `h`, checking up to `per_param` coordinates of each trainable
/// parameter (all of them when the parameter is smaller). For sparse
/// gradients only rows that were actually gathered are sampled.
pub fn check_store<F>(
    store: &mut ParamStore,
    h: f64,
    per_param: usize,
    seed: u64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape<'_>) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::with_params(store);
        let l = loss(store, &mut tape)?;
        tape.backward(l)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::with_params(store);
        let l = loss(store, &mut tape)?;
        let v = tape.value(l).data()[0];
        if !v.is_finite() {
            return Err(MoefError::Numeric(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<String, GroupReport> = BTreeMap::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (group, trainable, len) = {
            let p = store.get(id);
            (p.group().to_string(), p.requires_grad, p.value.len())
        };
        let entry = groups.entry(group.clone()).or_insert(GroupReport {
            group,
            max_rel_error: 0.0,
            coordinates: 0,
            skipped: true,
        });
        if !trainable {
            continue;
        }
        entry.skipped = false;
        let analytic = grads.param(id);
        let candidates: Vec<usize> = match analytic {
            Some(ParamGrad::Rows { width, rows }) => rows
                .keys()
                .flat_map(|&r| r * width..(r + 1) * width)
                .collect(),
            _ => (0..len).collect(),
        };
        let picked: Vec<usize> = if candidates.len() <= per_param {
            candidates
        } else {
            sample(&mut rng, candidates.len(), per_param)
                .into_iter()
                .map(|i| candidates[i])
                .collect()
        };
        let dense = analytic.map(|g| g.to_dense(len));
        for j in picked {
            let a = dense.as_ref().map_or(0.0, |d| d[j]);
            let original = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = original + h;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[j] = original - h;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[j] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let err = (a - numeric).abs() / denom;
            entry.max_rel_error = entry.max_rel_error.max(err);
            entry.coordinates += 1;
        }
    }
    Ok(GradCheckReport {
        groups: groups.into_values().collect(),
    })
}

/// Finite-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// A random tiny problem: two signals of 64 steps and four records split
/// across two snapshots, sized for [`ModelConfig::tiny`].
pub fn tiny_fixture(seed: u64) -> (OccasionSignalSeries, Vec<SampleRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..2)
        .map(|_| (0..64).map(|_| rng.gen_range(0.5..5.0)).collect())
        .collect();
    let series = OccasionSignalSeries::new(vec!["a".into(), "b".into()], rows, 5, 64 * 300)
        .expect("fixture series is well formed");
    let records = (0..4)
        .map(|i| {
            let len = rng.gen_range(0..5);
            SampleRecord {
                user_id: rng.gen_range(0..20),
                item_id: rng.gen_range(0..30),
                category_id: rng.gen_range(0..5),
                brand_id: rng.gen_range(0..5),
                profile: vec![rng.gen_range(0..3)],
                context: vec![rng.gen_range(0..3)],
                sequence: (0..len)
                    .map(|_| Behavior {
                        item_id: rng.gen_range(0..30),
                        category_id: rng.gen_range(0..5),
                        brand_id: rng.gen_range(0..5),
                    })
                    .collect(),
                label: u8::from(i % 2 == 0),
                timestamp: 0,
                snapshot_id: [40, 63][i % 2],
            }
        })
        .collect();
    (series, records)
}

/// Checks every parameter group of a tiny `variant` model on
/// [`tiny_fixture`] data. Groups listed in `frozen` are made untrainable and
/// come back marked as skipped.
pub fn grad_check(variant: ModelVariant, seed: u64, frozen: &[&str]) -> Result<GradCheckReport> {
    let (series, records) = tiny_fixture(seed);
    let stats = SignalStats::fit(&series, 48)?;
    let mut store = ParamStore::new();
    let model = MoefModel::new(&mut store, &ModelConfig::tiny(variant), stats, seed)?;
    for group in frozen {
        store.set_group_trainable(group, false);
    }
    let refs: Vec<&SampleRecord> = records.iter().collect();
    let labels: Vec<f64> = records.iter().map(|r| f64::from(r.label)).collect();
    check_store(&mut store, GRAD_CHECK_STEP, 10, seed, |_, tape| {
        let pass = moef_forward(tape, &model, &series, &refs)?;
        tape.logloss(pass.pred, &labels)
    })
}
