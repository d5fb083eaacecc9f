use std::sync::OnceLock;

use super::*;
use crate::error::MoefError;
use crate::mixture::{ModelConfig, ModelVariant};
use crate::signals::OccasionSignalSeries;
use crate::synthgen::{generate_interactions, generate_signals, RegimeSchedule, SampleRecord, WorldConfig};

struct Data {
    series: OccasionSignalSeries,
    schedule: RegimeSchedule,
    train: Vec<SampleRecord>,
    validation: Vec<SampleRecord>,
}

fn data() -> &'static Data {
    static DATA: OnceLock<Data> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = WorldConfig::small();
        let schedule = cfg.schedule().unwrap();
        let series = generate_signals(&cfg, &schedule).unwrap();
        let (_, stream) = generate_interactions(&cfg, &schedule, &series).unwrap();
        let split = cfg.split_timestamp();
        let (train, validation) = stream.records.iter().cloned().partition(|r| r.timestamp < split);
        Data {
            series,
            schedule,
            train,
            validation,
        }
    })
}

fn trained(variant: ModelVariant, train: &TrainConfig) -> TrainedModel {
    let d = data();
    let stats = fit_signal_stats(&d.series, &d.train).unwrap();
    let mut m = TrainedModel::init(&ModelConfig::small(variant), train, stats).unwrap();
    m.fit(&d.series, &d.train, |_, _| Ok(None)).unwrap();
    m
}

fn quick() -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        full_loss_passes: false,
        ..TrainConfig::default()
    }
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[1, 0], &[0.9, 0.1]).unwrap(), 1.0);
    assert_eq!(auc(&[1, 0, 1, 0], &[0.3; 4]).unwrap(), 0.5);
    assert_eq!(auc(&[1, 1, 0, 0], &[0.8, 0.4, 0.6, 0.2]).unwrap(), 0.75);
    assert!(matches!(auc(&[1, 1], &[0.2, 0.3]), Err(MoefError::UndefinedMetric(_))));
    assert!(matches!(auc(&[1, 0], &[0.2]), Err(MoefError::Dimension(_))));
}

#[test]
fn auc_matches_pair_counting() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.gen_range(2..60);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6u8)) / 5.0).collect();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        assert!((auc(&labels, &scores).unwrap() - wins / pairs).abs() < 1e-12);
    }
}

#[test]
fn entropy_examples() {
    assert_eq!(category_entropy(&[3, 3, 3]).unwrap(), 0.0);
    assert!((category_entropy(&[1, 2, 3, 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
    let h = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
    assert!((category_entropy(&[7, 7, 8, 9]).unwrap() - h).abs() < 1e-12);
    assert!(matches!(category_entropy(&[]), Err(MoefError::Contract(_))));
}

#[test]
fn batches_stay_within_one_snapshot() {
    let d = data();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    let batches = snapshot_batches(&d.train, 16, Some(&mut rng));
    let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..d.train.len()).collect::<Vec<_>>());
    for b in &batches {
        assert!(!b.is_empty() && b.len() <= 16);
        assert!(b.iter().all(|&i| d.train[i].snapshot_id == d.train[b[0]].snapshot_id));
    }
}

#[test]
fn training_lowers_the_loss() {
    let m = trained(
        ModelVariant::Full,
        &TrainConfig {
            epochs: 2,
            full_loss_passes: true,
            ..quick()
        },
    );
    let d = data();
    let loss = dataset_loss(&m.model, &m.store, &d.series, &d.train, 64).unwrap();
    let fresh = TrainedModel::init(&m.model.config, &m.train, m.model.stats.clone()).unwrap();
    let initial = dataset_loss(&fresh.model, &fresh.store, &d.series, &d.train, 64).unwrap();
    assert!(loss < initial, "{loss} vs {initial}");
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..quick()
    };
    let m = trained(ModelVariant::Full, &cfg);
    let fresh = TrainedModel::init(&m.model.config, &cfg, m.model.stats.clone()).unwrap();
    for ((_, a), (_, b)) in m.store.iter().zip(fresh.store.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let a = trained(ModelVariant::Full, &quick()).to_bytes();
    let b = trained(ModelVariant::Full, &quick()).to_bytes();
    assert!(a == b);
    let c = trained(ModelVariant::Full, &TrainConfig { seed: 2, ..quick() }).to_bytes();
    assert!(a != c);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let d = data();
    for variant in ModelVariant::ALL {
        let m = trained(variant, &quick());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back.to_bytes(), m.to_bytes());
        let a = score_records(&m.model, &m.store, &d.series, &d.validation, 64).unwrap();
        let b = score_records(&back.model, &back.store, &d.series, &d.validation, 64).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.y_hat), bits(&b.y_hat), "{variant}");
        assert_eq!(back.optimizer.accumulators(), m.optimizer.accumulators());
    }
}

#[test]
fn checkpoint_version_mismatch_is_rejected() {
    let mut bytes = trained(ModelVariant::OneExpert, &quick()).to_bytes();
    bytes[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let err = TrainedModel::from_bytes(&bytes).unwrap_err();
    assert!(matches!(err, MoefError::Incompatible(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(matches!(TrainedModel::from_bytes(b"not a checkpoint at all"), Err(MoefError::Incompatible(_))));
    let good = trained(ModelVariant::OneExpert, &quick()).to_bytes();
    assert!(matches!(TrainedModel::from_bytes(&good[..good.len() - 8]), Err(MoefError::Data(_))));
}

#[test]
fn injected_scores_drive_the_report() {
    let d = data();
    let perfect: Vec<f64> = d.validation.iter().map(|r| f64::from(r.label)).collect();
    let r = evaluate_scores(&d.validation, &perfect, &d.schedule, None).unwrap();
    assert_eq!(r.overall.auc, Some(1.0));
    let constant = vec![0.3; d.validation.len()];
    let r = evaluate_scores(&d.validation, &constant, &d.schedule, None).unwrap();
    assert_eq!(r.overall.auc, Some(0.5));
    let (p, n) = (r.promotion.unwrap(), r.normal.unwrap());
    assert_eq!(p.samples + n.samples, d.validation.len());
    assert!(p.samples > 0 && n.samples > 0);
}

#[test]
fn report_warns_above_the_ceiling() {
    let d = data();
    let perfect: Vec<f64> = d.validation.iter().map(|r| f64::from(r.label)).collect();
    let ceiling = crate::synthgen::AucCeiling {
        overall: Some(0.8),
        promotion: Some(0.995),
        normal: None,
    };
    let r = evaluate_scores(&d.validation, &perfect, &d.schedule, Some(&ceiling)).unwrap();
    assert_eq!(r.warnings.len(), 1, "{:?}", r.warnings);
    assert!(r.warnings[0].starts_with("overall"));
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert!(json.get("promotion").is_some() && json.get("normal").is_some());
}

#[test]
fn trained_report_stays_in_range() {
    let d = data();
    let m = trained(ModelVariant::Full, &quick());
    let r = evaluate(&m, &d.series, &d.validation, &d.schedule, None).unwrap();
    for s in [&r.overall, r.promotion.as_ref().unwrap(), r.normal.as_ref().unwrap()] {
        let a = s.auc.unwrap();
        assert!((0.0..=1.0).contains(&a));
        assert!(s.logloss.is_finite() && s.logloss > 0.0);
    }
}

fn read_csv(path: &std::path::Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn inspection_exports_alpha_and_experts() {
    let d = data();
    let m = trained(ModelVariant::Full, &quick());
    let dir = tempfile::tempdir().unwrap();
    let files = export_inspection(&m, &d.series, &d.validation, &d.schedule, dir.path()).unwrap();
    let alpha = read_csv(&files.alpha);
    assert_eq!(alpha[0], ["row", "timestamp", "snapshot_id", "regime", "alpha_1", "alpha_2"]);
    assert_eq!(alpha.len() - 1, d.validation.len());
    for row in &alpha[1..] {
        let s: f64 = row[4..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    let experts = read_csv(&files.experts);
    assert_eq!(experts.len() - 1, 2 * d.validation.len());
    assert_eq!(experts[0].len(), 2 + m.model.config.expert.output_width());
}

#[test]
fn single_expert_inspection_is_all_ones() {
    let d = data();
    let m = trained(ModelVariant::OneExpert, &quick());
    let dir = tempfile::tempdir().unwrap();
    let files = export_inspection(&m, &d.series, &d.validation, &d.schedule, dir.path()).unwrap();
    let alpha = read_csv(&files.alpha);
    assert_eq!(alpha[0].len(), 5);
    assert!(alpha[1..].iter().all(|r| r[4] == "1"));
}

#[test]
fn grad_check_passes_and_skips_frozen_groups() {
    for seed in [1, 2] {
        let r = grad_check(ModelVariant::Full, seed, &[]).unwrap();
        assert!(r.passes(1e-3), "{r:?}");
        assert!(r.groups.iter().all(|g| !g.skipped && g.coordinates > 0));
    }
    let r = grad_check(ModelVariant::Full, 3, &["head"]).unwrap();
    let head = r.groups.iter().find(|g| g.group == "head").unwrap();
    assert!(head.skipped && head.coordinates == 0);
    assert!(r.passes(1e-3));
}

#[test]
fn ablation_covers_every_variant_and_seed() {
    let d = data();
    let stats = fit_signal_stats(&d.series, &d.train).unwrap();
    let short: Vec<SampleRecord> = d.train.iter().take(200).cloned().collect();
    let ad = AblationData {
        series: &d.series,
        train: &short,
        validation: &d.validation,
        stats: &stats,
        schedule: &d.schedule,
        ceiling: None,
    };
    let mut seen = 0;
    let r = run_ablation(&ModelConfig::small(ModelVariant::Full), &quick(), &ModelVariant::ALL, &[1, 2], &ad, |_| {
        seen += 1
    })
    .unwrap();
    assert_eq!(seen, 10);
    assert_eq!(r.runs.len(), 10);
    let md = r.to_markdown();
    for v in ModelVariant::ALL {
        assert_eq!(r.aucs(v).len(), 2);
        assert!(md.contains(&format!("| {v} | 2 |")), "{md}");
    }
}
