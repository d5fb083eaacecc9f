use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;
use crate::error::MoefError;
use crate::harness::category_entropy;
use crate::signals::fft_modulus;

fn quiet(mut cfg: WorldConfig) -> WorldConfig {
    for s in &mut cfg.signals {
        s.noise_std = 0.0;
    }
    cfg
}

fn small_world() -> WorldConfig {
    WorldConfig {
        num_users: 200,
        num_items: 100,
        num_categories: 10,
        num_brands: 20,
        horizon_hours: 48,
        split_hour: 36,
        impressions_per_hour: 40.0,
        promotions: vec![PromotionConfig {
            start_hour: 12,
            pre_hours: 4,
            peak_hours: 8,
            post_hours: 4,
            intensity: 1.0,
        }],
        ..WorldConfig::default()
    }
}

#[test]
fn schedule_covers_horizon_contiguously() {
    let cfg = WorldConfig::default();
    let s = cfg.schedule().unwrap();
    assert_eq!(s.start(), cfg.start_timestamp);
    assert_eq!(s.end(), cfg.end_timestamp());
    for w in s.segments().windows(2) {
        assert_eq!(w[0].end, w[1].start);
    }
    let kinds: Vec<RegimeKind> = s.segments().iter().map(|g| g.kind).collect();
    use RegimeKind::*;
    assert_eq!(
        kinds,
        vec![Normal, PrePromo, PromoPeak, PostPromo, Normal, PrePromo, PromoPeak, PostPromo, Normal]
    );
    let peak = cfg.start_timestamp + (4 * 24 + 12) * 3600;
    assert_eq!(s.kind_at(peak), Some(PromoPeak));
    assert_eq!(s.intensity_at(peak), 1.0);
    assert_eq!(s.kind_at(cfg.end_timestamp()), None);
    assert!(s.kind_at(cfg.split_timestamp() + 30 * 3600).unwrap().is_promotion());
}

#[test]
fn schedule_rejects_gaps_and_overlaps() {
    let seg = |kind, start, end| Segment {
        kind,
        start,
        end,
        intensity: 0.0,
    };
    assert!(RegimeSchedule::new(vec![seg(RegimeKind::Normal, 0, 10), seg(RegimeKind::Normal, 11, 20)]).is_err());
    assert!(RegimeSchedule::new(vec![seg(RegimeKind::Normal, 0, 0)]).is_err());
    let p = PromotionConfig {
        start_hour: 2,
        pre_hours: 2,
        peak_hours: 2,
        post_hours: 2,
        intensity: 1.0,
    };
    let overlapping = [p.clone(), PromotionConfig { start_hour: 4, ..p }];
    let err = RegimeSchedule::from_promotions(0, 100 * 3600, &overlapping, &PhaseIntensity::default()).unwrap_err();
    assert!(matches!(err, MoefError::Config(_)));
}

#[test]
fn short_horizon_is_a_config_error() {
    let cfg = WorldConfig {
        horizon_hours: 7,
        split_hour: 5,
        promotions: vec![],
        ..WorldConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(MoefError::Config(_))));
}

#[test]
fn quiet_normal_signals_hold_only_dc_and_daily_bins() {
    let cfg = quiet(WorldConfig {
        interval_minutes: 45,
        history_steps: 32,
        snapshot_minutes: 45,
        horizon_hours: 72,
        split_hour: 48,
        promotions: vec![],
        ..WorldConfig::default()
    });
    let series = generate_signals(&cfg, &cfg.schedule().unwrap()).unwrap();
    assert_eq!(series.num_steps(), 96);
    for m in 0..series.num_signals() {
        for start in [0, 5, 17, 64] {
            let window = &series.signal(m)[start..start + 32];
            let spec = fft_modulus(window, 1, 32).unwrap();
            for (k, &v) in spec.iter().enumerate() {
                if ![0, 1, 31].contains(&k) {
                    assert!(v < 1e-9, "signal {m} start {start} bin {k}: {v}");
                }
            }
            assert!(spec[1] > 1.0);
        }
    }
}

#[test]
fn promotion_lifts_burst_bin() {
    let cfg = quiet(WorldConfig::default());
    let series = generate_signals(&cfg, &cfg.schedule().unwrap()).unwrap();
    let step = cfg.step_seconds();
    let col = |hour: i64| ((hour * 3600) / step) as usize;
    for m in [0, 2] {
        let peak = fft_modulus(&series.signal(m)[col(4 * 24 + 14)..][..24], 1, 32).unwrap();
        let normal = fft_modulus(&series.signal(m)[col(2 * 24 + 14)..][..24], 1, 32).unwrap();
        assert!(peak[8] > normal[8] + 100.0, "{} vs {}", peak[8], normal[8]);
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = small_world();
    let sched = cfg.schedule().unwrap();
    let a = generate_signals(&cfg, &sched).unwrap();
    let b = generate_signals(&cfg, &sched).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    let (_, sa) = generate_interactions(&cfg, &sched, &a).unwrap();
    let (_, sb) = generate_interactions(&cfg, &sched, &b).unwrap();
    assert_eq!(sa.records, sb.records);
    assert_eq!(sa.truth, sb.truth);
    let other = WorldConfig { seed: 99, ..cfg.clone() };
    let (_, sc) = generate_interactions(&other, &sched, &a).unwrap();
    assert_ne!(sa.records, sc.records);
}

#[test]
fn records_respect_invariants() {
    let cfg = small_world();
    let sched = cfg.schedule().unwrap();
    let series = generate_signals(&cfg, &sched).unwrap();
    let (_, s) = generate_interactions(&cfg, &sched, &series).unwrap();
    assert!(!s.records.is_empty());
    let first = cfg.first_impression_timestamp();
    for w in s.records.windows(2) {
        assert!(w[0].timestamp <= w[1].timestamp);
    }
    for r in &s.records {
        assert!(r.label <= 1);
        assert!(r.sequence.len() <= cfg.history_cap);
        assert!(r.timestamp >= first && r.timestamp < cfg.end_timestamp());
        let snap = r.snapshot_id as usize;
        assert!(snap + 1 >= cfg.history_steps);
        assert!(series.timestamp_of(snap) <= r.timestamp);
        assert!(r.timestamp - series.timestamp_of(snap) < 3600);
        assert_eq!(SampleRecord::parse_line(&r.to_line(), 5, 6).unwrap(), *r);
    }
    assert!(s.truth.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn identity_preferences_keep_category_ctr() {
    let mut cfg = WorldConfig::default();
    cfg.click.preference_shift = 0.0;
    cfg.click.deal_boost = 0.0;
    cfg.click.promo_lift = 0.0;
    let sched = cfg.schedule().unwrap();
    let series = generate_signals(&cfg, &sched).unwrap();
    let (_, s) = generate_interactions(&cfg, &sched, &series).unwrap();
    assert!(s.records.len() >= 100_000, "{}", s.records.len());
    let mut table = vec![[[0.0f64; 2]; 2]; cfg.num_categories + 1];
    for (r, k) in s.records.iter().zip(&s.kinds) {
        table[r.category_id as usize][usize::from(k.is_promotion())][usize::from(r.label)] += 1.0;
    }
    let mut chi2 = 0.0;
    let mut df = 0.0;
    for t in table.iter().filter(|t| t.iter().flatten().sum::<f64>() > 0.0) {
        let n: f64 = t.iter().flatten().sum();
        for g in 0..2 {
            for y in 0..2 {
                let expected = (t[g][0] + t[g][1]) * (t[0][y] + t[1][y]) / n;
                chi2 += (t[g][y] - expected).powi(2) / expected;
            }
        }
        df += 1.0;
    }
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2} on {df} df, p = {p}");
}

#[test]
fn promotions_shift_category_entropy() {
    let cfg = WorldConfig::default();
    let sched = cfg.schedule().unwrap();
    let series = generate_signals(&cfg, &sched).unwrap();
    let (_, s) = generate_interactions(&cfg, &sched, &series).unwrap();
    let clicked = |promo: bool| -> Vec<u64> {
        s.records
            .iter()
            .zip(&s.kinds)
            .filter(|(r, k)| r.label == 1 && k.is_promotion() == promo)
            .map(|(r, _)| r.category_id)
            .collect()
    };
    let h_promo = category_entropy(&clicked(true)).unwrap();
    let h_normal = category_entropy(&clicked(false)).unwrap();
    assert!((h_promo - h_normal).abs() > 0.05, "{h_promo} vs {h_normal}");
}

#[test]
fn split_files_are_leak_free() {
    let dir = tempfile::tempdir().unwrap();
    let paths = DatasetPaths::new(dir.path());
    let cfg = small_world();
    let summary = generate_world(&cfg, &paths).unwrap();
    let train = read_dataset(&paths.train(), 5, 6).unwrap();
    let val = read_dataset(&paths.validation(), 5, 6).unwrap();
    assert_eq!(train.len(), summary.manifest.counts.train);
    assert_eq!(val.len(), summary.manifest.counts.validation);
    assert!(!train.is_empty() && !val.is_empty());
    let max_train = train.iter().map(|r| r.timestamp).max().unwrap();
    let min_val = val.iter().map(|r| r.timestamp).min().unwrap();
    assert!(max_train < min_val);
    assert!(max_train < cfg.split_timestamp() && min_val >= cfg.split_timestamp());
    let m = Manifest::read(&paths.manifest()).unwrap();
    assert_eq!(m, summary.manifest);
    assert!(m.ceilings.validation.overall.unwrap() > 0.5);

    let all: Vec<SampleRecord> = train.iter().chain(&val).cloned().collect();
    let late = write_dataset(&all, cfg.end_timestamp(), &dir.path().join("a"), &dir.path().join("b")).unwrap();
    assert_eq!(late.counts.train, all.len());
    assert_eq!(late.counts.validation, 0);
    assert_eq!(late.warnings.len(), 1);
    assert_eq!(std::fs::read_to_string(dir.path().join("b")).unwrap(), "");
}

#[test]
fn world_files_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_world();
    generate_world(&cfg, &DatasetPaths::new(a.path())).unwrap();
    generate_world(&cfg, &DatasetPaths::new(b.path())).unwrap();
    for f in ["train.tsv", "validation.tsv", "signals.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_dataset_is_an_io_error() {
    let err = read_dataset(std::path::Path::new("/nonexistent/train.tsv"), 5, 6).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

