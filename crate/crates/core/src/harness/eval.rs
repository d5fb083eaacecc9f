use serde::{Deserialize, Serialize};

use super::metrics::auc;
use super::train::{score_records, TrainedModel};
use crate::error::{MoefError, Result};
use crate::numerics::logloss;
use crate::signals::OccasionSignalSeries;
use crate::synthgen::{AucCeiling, RegimeSchedule, SampleRecord};

/// Slack allowed above the generator's ground-truth AUC before a report is
/// flagged as suspicious.
pub const CEILING_SLACK: f64 = 0.01;

/// Metrics over one slice of the evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub samples: usize,
    pub positives: usize,
    pub logloss: f64,
    /// `None` when the slice holds a single class.
    pub auc: Option<f64>,
    /// Ground-truth AUC of the generator on this slice, when known.
    pub ceiling: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: SliceReport,
    pub promotion: Option<SliceReport>,
    pub normal: Option<SliceReport>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn slice(labels: &[u8], scores: &[f64], ceiling: Option<f64>, name: &str, warnings: &mut Vec<String>) -> Result<SliceReport> {
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let auc = match auc(labels, scores) {
        Ok(a) => Some(a),
        Err(MoefError::UndefinedMetric(msg)) => {
            warnings.push(format!("{name}: AUC undefined ({msg})"));
            None
        }
        Err(e) => return Err(e),
    };
    if let (Some(a), Some(c)) = (auc, ceiling) {
        if a > c + CEILING_SLACK {
            warnings.push(format!(
                "{name}: AUC {a:.4} exceeds the ground-truth ceiling {c:.4} by more than {CEILING_SLACK}"
            ));
        }
    }
    Ok(SliceReport {
        samples: labels.len(),
        positives: labels.iter().filter(|&&l| l == 1).count(),
        logloss: logloss(&y, scores)?,
        auc,
        ceiling,
    })
}

/// Builds a report from externally supplied scores. Records are assigned to
/// the promotion or normal slice by the regime in force at their timestamp.
pub fn evaluate_scores(
    records: &[SampleRecord],
    scores: &[f64],
    schedule: &RegimeSchedule,
    ceiling: Option<&AucCeiling>,
) -> Result<EvalReport> {
    if records.len() != scores.len() {
        return Err(MoefError::dim(format!(
            "{} records but {} scores",
            records.len(),
            scores.len()
        )));
    }
    if records.is_empty() {
        return Err(MoefError::Data("evaluation set is empty".into()));
    }
    let mut warnings = Vec::new();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let overall = slice(&labels, scores, ceiling.and_then(|c| c.overall), "overall", &mut warnings)?;
    let mut parts = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for (r, &s) in records.iter().zip(scores) {
        let kind = schedule.kind_at(r.timestamp).ok_or_else(|| {
            MoefError::Data(format!("timestamp {} lies outside the regime schedule", r.timestamp))
        })?;
        let part = &mut parts[usize::from(kind.is_promotion())];
        part.0.push(r.label);
        part.1.push(s);
    }
    let [(nl, ns), (pl, ps)] = parts;
    let promotion = if pl.is_empty() {
        None
    } else {
        Some(slice(&pl, &ps, ceiling.and_then(|c| c.promotion), "promotion", &mut warnings)?)
    };
    let normal = if nl.is_empty() {
        None
    } else {
        Some(slice(&nl, &ns, ceiling.and_then(|c| c.normal), "normal", &mut warnings)?)
    };
    Ok(EvalReport {
        overall,
        promotion,
        normal,
        warnings,
    })
}

/// Scores `records` with a trained model and reports per-regime metrics.
pub fn evaluate(
    trained: &TrainedModel,
    series: &OccasionSignalSeries,
    records: &[SampleRecord],
    schedule: &RegimeSchedule,
    ceiling: Option<&AucCeiling>,
) -> Result<EvalReport> {
    let scores = score_records(&trained.model, &trained.store, series, records, trained.train.batch_size)?;
    evaluate_scores(records, &scores.y_hat, schedule, ceiling)
}
