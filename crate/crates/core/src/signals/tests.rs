use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::MoefError;

/// Direct O(N²) DFT modulus of a zero-padded real row.
fn dft_modulus(row: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in row.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

fn series(rows: Vec<Vec<f64>>) -> OccasionSignalSeries {
    let names = (0..rows.len()).map(|i| format!("s{i}")).collect();
    OccasionSignalSeries::new(names, rows, 5, 1_000_000).unwrap()
}

#[test]
fn window_counts() {
    let cfg = WindowingConfig::default();
    let s = series(vec![vec![0.0; 96]]);
    let w = slide_windows(&s, &cfg).unwrap();
    assert_eq!(w.len(), 13);
    assert_eq!(w.iter().map(|w| w.start).collect::<Vec<_>>(), (0..=72).step_by(6).collect::<Vec<_>>());

    let tiling = WindowingConfig {
        window_size: 4,
        stride: 4,
        fft_points: 4,
        ..Default::default()
    };
    assert_eq!(slide_windows(&series(vec![vec![0.0; 12]]), &tiling).unwrap().len(), 3);
    assert_eq!(slide_windows(&series(vec![vec![0.0; 4]]), &tiling).unwrap().len(), 1);
    assert!(matches!(
        slide_windows(&series(vec![vec![0.0; 3]]), &tiling),
        Err(MoefError::InsufficientHistory { needed: 4, available: 3 })
    ));
}

#[test]
fn windows_are_exact_slices() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..2).map(|_| (0..40).map(|_| rng.gen()).collect()).collect();
    let s = series(rows.clone());
    let cfg = WindowingConfig {
        window_size: 8,
        stride: 5,
        fft_points: 8,
        ..Default::default()
    };
    for w in slide_windows(&s, &cfg).unwrap() {
        for (m, row) in rows.iter().enumerate() {
            assert_eq!(&w.values[m * 8..(m + 1) * 8], &row[w.start..w.start + 8]);
        }
    }
}

#[test]
fn normalization_modes() {
    let s = series(vec![vec![3.0; 10], vec![std::f64::consts::E - 1.0; 10]]);
    let stats = SignalStats::fit(&s, 10).unwrap();
    let z = normalize(&s, &stats, Normalization::Zscore).unwrap();
    assert!(z.signal(0).iter().all(|&v| v == 0.0));
    let l = normalize(&s, &stats, Normalization::Log1p).unwrap();
    assert!((l.value(1, 0) - 1.0).abs() < 1e-15);
    assert!((l.value(0, 0) - 4f64.ln()).abs() < 1e-15);
    assert_eq!(normalize(&s, &stats, Normalization::None).unwrap(), s);

    let zero = series(vec![vec![0.0; 3]]);
    let l = normalize(&zero, &SignalStats::identity(1), Normalization::Log1p).unwrap();
    assert_eq!(l.signal(0), &[0.0, 0.0, 0.0]);

    let neg = series(vec![vec![1.0, -0.5, 2.0]]);
    let err = normalize(&neg, &SignalStats::identity(1), Normalization::Log1p).unwrap_err();
    assert!(matches!(&err, MoefError::Domain(m) if m.contains("s0") && m.contains("step 1")), "{err}");
}

#[test]
fn fft_known_spectra() {
    assert!(fft_modulus(&[0.0; 24], 1, 32).unwrap().iter().all(|&v| v == 0.0));

    let c = 1.7;
    let dc = fft_modulus(&[c; 32], 1, 32).unwrap();
    assert!((dc[0] - 32.0 * c).abs() < 1e-9);
    assert!(dc[1..].iter().all(|&v| v.abs() < 1e-9));

    let cosine: Vec<f64> = (0..32).map(|t| (2.0 * PI * 4.0 * t as f64 / 32.0).cos()).collect();
    let oracle = dft_modulus(&cosine, 32);
    let spec = fft_modulus(&cosine, 1, 32).unwrap();
    for k in 0..32 {
        let expected = if k == 4 || k == 28 { 16.0 } else { 0.0 };
        assert!((spec[k] - expected).abs() < 1e-9, "bin {k}: {}", spec[k]);
        assert!((oracle[k] - expected).abs() < 1e-9, "oracle bin {k}: {}", oracle[k]);
    }
}

#[test]
fn fft_config_errors() {
    assert!(matches!(fft_modulus(&[0.0; 24], 1, 24), Err(MoefError::Config(_))));
    assert!(matches!(fft_modulus(&[0.0; 24], 1, 16), Err(MoefError::Config(_))));
    let bad = WindowingConfig {
        fft_points: 48,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn spectrum_sequence_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..2).map(|_| (0..96).map(|_| rng.gen::<f64>() * 10.0).collect()).collect();
    let s = series(rows);
    let stats = SignalStats::fit(&s, 96).unwrap();
    let cfg = WindowingConfig::default();
    let seq = build_spectrum_sequence(&s, &cfg, &stats).unwrap();
    assert_eq!((seq.len(), seq.width()), (13, 64));
    assert!(seq.values().iter().all(|&v| v >= 0.0));

    let one = series(vec![(0..24).map(|t| t as f64).collect()]);
    let seq = build_spectrum_sequence(&one, &cfg, &SignalStats::fit(&one, 24).unwrap()).unwrap();
    assert_eq!((seq.len(), seq.width()), (1, 32));

    let zeros = series(vec![vec![0.0; 96]; 3]);
    let none = WindowingConfig {
        normalization: Normalization::None,
        ..Default::default()
    };
    let seq = build_spectrum_sequence(&zeros, &none, &SignalStats::identity(3)).unwrap();
    assert_eq!((seq.len(), seq.width()), (13, 96));
    assert!(seq.values().iter().all(|&v| v == 0.0));

    let one_sided = WindowingConfig {
        one_sided: true,
        ..Default::default()
    };
    let seq = build_spectrum_sequence(&zeros, &one_sided, &SignalStats::fit(&zeros, 96).unwrap()).unwrap();
    assert_eq!(seq.width(), 3 * 17);

    let td = build_time_domain_sequence(&zeros, &cfg).unwrap();
    assert_eq!((td.len(), td.width()), (13, 72));
}

#[test]
fn spectrum_rows_flatten_signal_major() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..40).map(|_| rng.gen::<f64>()).collect()).collect();
    let s = series(rows.clone());
    let cfg = WindowingConfig {
        window_size: 8,
        stride: 4,
        fft_points: 16,
        normalization: Normalization::None,
        one_sided: false,
    };
    let seq = build_spectrum_sequence(&s, &cfg, &SignalStats::identity(3)).unwrap();
    for (t, &start) in seq.window_starts().iter().enumerate() {
        for (m, row) in rows.iter().enumerate() {
            let oracle = dft_modulus(&row[start..start + 8], 16);
            let got = &seq.row(t)[m * 16..(m + 1) * 16];
            for (a, b) in got.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn periodic_shift_by_whole_periods_keeps_spectra() {
    let period = 12.0;
    let make = |shift: f64| {
        series(vec![(0..96)
            .map(|t| 5.0 + (2.0 * PI * (t as f64 + shift) / period).sin() + 0.5 * (2.0 * PI * (t as f64 + shift) / 4.0).cos())
            .collect()])
    };
    let cfg = WindowingConfig {
        normalization: Normalization::None,
        ..Default::default()
    };
    let a = build_spectrum_sequence(&make(0.0), &cfg, &SignalStats::identity(1)).unwrap();
    for k in 1..4 {
        let b = build_spectrum_sequence(&make(k as f64 * period), &cfg, &SignalStats::identity(1)).unwrap();
        let diff = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "shift {k} periods: {diff}");
    }
}

proptest! {
    #[test]
    fn fft_matches_direct_dft_and_parseval(
        row in prop::collection::vec(-100.0f64..100.0, 1..=32),
        log_n in 0u32..=6,
    ) {
        let n = (1usize << log_n).max(row.len()).next_power_of_two();
        let spec = fft_modulus(&row, 1, n).unwrap();
        let oracle = dft_modulus(&row, n);
        let scale = row.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        for (a, b) in spec.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12 * scale * n as f64);
        }
        let energy_t: f64 = row.iter().map(|x| x * x).sum();
        let energy_f: f64 = spec.iter().map(|x| x * x).sum();
        if energy_t > 0.0 {
            prop_assert!(((energy_f - n as f64 * energy_t) / (n as f64 * energy_t)).abs() < 1e-9);
        }
        for k in 1..n {
            prop_assert!((spec[k] - spec[n - k]).abs() <= 1e-12 * spec[k].abs().max(1.0));
        }
    }
}
