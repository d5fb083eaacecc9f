use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generate::{generate_interactions, generate_signals, InteractionStream};
use super::record::SampleRecord;
use super::schedule::{RegimeKind, RegimeSchedule};
use super::world::WorldConfig;
use crate::error::{MoefError, Result};
use crate::harness::auc;

pub const MANIFEST_VERSION: u32 = 1;

/// File layout of a generated dataset directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetPaths {
    pub dir: PathBuf,
}

impl DatasetPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn train(&self) -> PathBuf {
        self.dir.join("train.tsv")
    }

    pub fn validation(&self) -> PathBuf {
        self.dir.join("validation.tsv")
    }

    pub fn signals(&self) -> PathBuf {
        self.dir.join("signals.csv")
    }

    /// The four dataset files in a fixed order.
    pub fn files(&self) -> [PathBuf; 4] {
        [self.train(), self.validation(), self.signals(), self.manifest()]
    }

    /// Hex SHA-256 of each dataset file, keyed by file name.
    pub fn digests(&self) -> Result<Vec<(String, String)>> {
        self.files()
            .iter()
            .map(|p| {
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((name, file_sha256(p)?))
            })
            .collect()
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
}

/// AUC of the generator's own click probabilities: the best any model
/// can do in expectation. `None` where a slice has a single class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AucCeiling {
    pub overall: Option<f64>,
    pub promotion: Option<f64>,
    pub normal: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ceilings {
    pub train: AucCeiling,
    pub validation: AucCeiling,
}

/// Companion file describing how a dataset was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub world: WorldConfig,
    pub schedule: RegimeSchedule,
    pub split_timestamp: i64,
    pub signal_names: Vec<String>,
    pub counts: SplitCounts,
    pub ceilings: Ceilings,
    pub promoted_categories: Vec<u64>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MoefError::io(path, e))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| MoefError::Data(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(MoefError::Incompatible(format!(
                "manifest version {} (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| MoefError::io(path, e))
    }
}

/// Result of splitting a stream into train and validation files.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitSummary {
    pub counts: SplitCounts,
    pub warnings: Vec<String>,
}

/// Writes records with `timestamp < split` to `train` and the rest to
/// `validation`, each sorted by timestamp (stable for equal timestamps).
pub fn write_dataset(records: &[SampleRecord], split: i64, train: &Path, validation: &Path) -> Result<SplitSummary> {
    let mut sorted: Vec<&SampleRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.timestamp);
    let cut = sorted.partition_point(|r| r.timestamp < split);
    write_records(train, &sorted[..cut])?;
    write_records(validation, &sorted[cut..])?;
    let mut warnings = Vec::new();
    if cut == sorted.len() {
        warnings.push(format!("validation split is empty: every record precedes {split}"));
    }
    if cut == 0 {
        warnings.push(format!("training split is empty: no record precedes {split}"));
    }
    Ok(SplitSummary {
        counts: SplitCounts {
            train: cut,
            validation: sorted.len() - cut,
        },
        warnings,
    })
}

fn write_records(path: &Path, records: &[&SampleRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| MoefError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", r.to_line()).map_err(|e| MoefError::io(path, e))?;
    }
    w.flush().map_err(|e| MoefError::io(path, e))
}

/// Reads a dataset file written by [`write_dataset`].
pub fn read_dataset(path: &Path, profile_len: usize, context_len: usize) -> Result<Vec<SampleRecord>> {
    let file = File::open(path).map_err(|e| MoefError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| MoefError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = SampleRecord::parse_line(&line, profile_len, context_len).map_err(|e| match e {
            MoefError::Data(m) => MoefError::Data(format!("{}:{}: {m}", path.display(), i + 1)),
            MoefError::Schema(m) => MoefError::Schema(format!("{}:{}: {m}", path.display(), i + 1)),
            other => other,
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn ceiling(stream: &InteractionStream, keep: impl Fn(usize) -> bool) -> AucCeiling {
    let slice = |f: &dyn Fn(RegimeKind) -> bool| {
        let (mut labels, mut scores) = (Vec::new(), Vec::new());
        for i in (0..stream.records.len()).filter(|&i| keep(i) && f(stream.kinds[i])) {
            labels.push(stream.records[i].label);
            scores.push(stream.truth[i]);
        }
        auc(&labels, &scores).ok()
    };
    AucCeiling {
        overall: slice(&|_| true),
        promotion: slice(&|k| k.is_promotion()),
        normal: slice(&|k| !k.is_promotion()),
    }
}

/// What [`generate_world`] produced.
#[derive(Clone, Debug)]
pub struct GenerationSummary {
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

/// Generates signals and impressions for `cfg` and writes the train and
/// validation files, the signal series and the manifest into `paths.dir`.
pub fn generate_world(cfg: &WorldConfig, paths: &DatasetPaths) -> Result<GenerationSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&paths.dir).map_err(|e| MoefError::io(&paths.dir, e))?;
    let schedule = cfg.schedule()?;
    let signals = generate_signals(cfg, &schedule)?;
    let (world, stream) = generate_interactions(cfg, &schedule, &signals)?;
    let split = cfg.split_timestamp();
    let summary = write_dataset(&stream.records, split, &paths.train(), &paths.validation())?;
    signals.write(&paths.signals())?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        world: cfg.clone(),
        schedule,
        split_timestamp: split,
        signal_names: signals.names().to_vec(),
        counts: summary.counts.clone(),
        ceilings: Ceilings {
            train: ceiling(&stream, |i| stream.records[i].timestamp < split),
            validation: ceiling(&stream, |i| stream.records[i].timestamp >= split),
        },
        promoted_categories: world.promoted_categories(),
    };
    manifest.write(&paths.manifest())?;
    Ok(GenerationSummary {
        manifest,
        warnings: summary.warnings,
    })
}

/// Hex SHA-256 digest of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| MoefError::io(path, e))?;
    Ok(Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect())
}
