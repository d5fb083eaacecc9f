use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::train::{snapshot_batches, TrainedModel};
use crate::error::{MoefError, Result};
use crate::signals::OccasionSignalSeries;
use crate::synthgen::{RegimeSchedule, SampleRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct InspectionFiles {
    pub alpha: PathBuf,
    pub experts: PathBuf,
    pub rows: usize,
}

/// Writes `alpha.csv` (one row per record: timestamp, snapshot, regime and
/// the K gate weights) and `experts.csv` (one row per record and expert with
/// the raw expert output vector) into `out_dir`, in record order.
pub fn export_inspection(
    trained: &TrainedModel,
    series: &OccasionSignalSeries,
    records: &[SampleRecord],
    schedule: &RegimeSchedule,
    out_dir: &Path,
) -> Result<InspectionFiles> {
    let k = trained.model.num_experts();
    let mut alpha = vec![Vec::new(); records.len()];
    let mut outputs = vec![Vec::new(); records.len()];
    for batch in snapshot_batches(records, trained.train.batch_size, None) {
        let refs: Vec<&SampleRecord> = batch.iter().map(|&i| &records[i]).collect();
        let p = trained.model.predict(&trained.store, series, &refs, true)?;
        let experts = p.experts.expect("expert outputs requested");
        for (j, &i) in batch.iter().enumerate() {
            alpha[i] = p.alpha[j].clone();
            outputs[i] = experts.iter().map(|t| t.row(j).to_vec()).collect();
        }
    }

    let mut a = String::from("row,timestamp,snapshot_id,regime");
    for e in 1..=k {
        write!(a, ",alpha_{e}").expect("write to String");
    }
    a.push('\n');
    for (i, r) in records.iter().enumerate() {
        let kind = schedule.kind_at(r.timestamp).ok_or_else(|| {
            MoefError::Data(format!("timestamp {} lies outside the regime schedule", r.timestamp))
        })?;
        write!(a, "{i},{},{},{}", r.timestamp, r.snapshot_id, kind.name()).expect("write to String");
        for v in &alpha[i] {
            write!(a, ",{v}").expect("write to String");
        }
        a.push('\n');
    }

    let width = trained.model.config.expert.output_width();
    let mut x = String::from("row,expert");
    for c in 0..width {
        write!(x, ",r_{c}").expect("write to String");
    }
    x.push('\n');
    for (i, per_expert) in outputs.iter().enumerate() {
        for (e, r) in per_expert.iter().enumerate() {
            write!(x, "{i},{}", e + 1).expect("write to String");
            for v in r {
                write!(x, ",{v}").expect("write to String");
            }
            x.push('\n');
        }
    }

    std::fs::create_dir_all(out_dir).map_err(|e| MoefError::io(out_dir, e))?;
    let files = InspectionFiles {
        alpha: out_dir.join("alpha.csv"),
        experts: out_dir.join("experts.csv"),
        rows: records.len(),
    };
    std::fs::write(&files.alpha, a).map_err(|e| MoefError::io(&files.alpha, e))?;
    std::fs::write(&files.experts, x).map_err(|e| MoefError::io(&files.experts, e))?;
    Ok(files)
}
