use serde::{Deserialize, Serialize};

use super::OccasionSignalSeries;
use crate::error::{MoefError, Result};

const STATS_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Zscore,
    Log1p,
    None,
}

/// Sliding-window and FFT settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowingConfig {
    /// Steps per window (N_w).
    pub window_size: usize,
    /// Steps between consecutive window starts (N_s).
    pub stride: usize,
    /// FFT length (N_f); windows are zero-padded on the right up to it.
    pub fft_points: usize,
    pub normalization: Normalization,
    /// Keep only bins `0..=N_f/2` instead of all `N_f`.
    pub one_sided: bool,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self {
            window_size: 24,
            stride: 6,
            fft_points: 32,
            normalization: Normalization::Zscore,
            one_sided: false,
        }
    }
}

impl WindowingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.stride == 0 {
            return Err(MoefError::Config("window size and stride must be positive".into()));
        }
        if !self.fft_points.is_power_of_two() || self.fft_points < self.window_size {
            return Err(MoefError::Config(format!(
                "fft_points {} must be a power of two >= window_size {}",
                self.fft_points, self.window_size
            )));
        }
        Ok(())
    }

    /// Number of fully contained windows over `steps` samples: ⌊(N − N_w)/N_s⌋ + 1.
    pub fn window_count(&self, steps: usize) -> Result<usize> {
        if steps < self.window_size {
            return Err(MoefError::InsufficientHistory {
                needed: self.window_size,
                available: steps,
            });
        }
        Ok((steps - self.window_size) / self.stride + 1)
    }

    /// Magnitude bins kept per signal.
    pub fn bins(&self) -> usize {
        if self.one_sided {
            self.fft_points / 2 + 1
        } else {
            self.fft_points
        }
    }

    /// Width of one flattened spectrum row for `signals` signals.
    pub fn spectrum_width(&self, signals: usize) -> usize {
        signals * self.bins()
    }
}

/// One `M × N_w` slice of a series, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalWindow {
    pub start: usize,
    pub rows: usize,
    pub values: Vec<f64>,
}

/// Every window fully inside the series, starting at 0, N_s, 2·N_s, …
pub fn slide_windows(series: &OccasionSignalSeries, cfg: &WindowingConfig) -> Result<Vec<SignalWindow>> {
    cfg.validate()?;
    let count = cfg.window_count(series.num_steps())?;
    let m = series.num_signals();
    Ok((0..count)
        .map(|w| {
            let start = w * cfg.stride;
            let values = (0..m)
                .flat_map(|s| series.signal(s)[start..start + cfg.window_size].iter().copied())
                .collect();
            SignalWindow {
                start,
                rows: m,
                values,
            }
        })
        .collect())
}

/// Per-signal mean and population standard deviation over a reference period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl SignalStats {
    /// Statistics over columns `[0, end)` of `series`.
    pub fn fit(series: &OccasionSignalSeries, end: usize) -> Result<Self> {
        let end = end.min(series.num_steps());
        if end == 0 {
            return Err(MoefError::Data("no steps to compute signal statistics from".into()));
        }
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for m in 0..series.num_signals() {
            let xs = &series.signal(m)[..end];
            let mu = xs.iter().sum::<f64>() / end as f64;
            let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / end as f64;
            mean.push(mu);
            std.push(var.sqrt());
        }
        Ok(Self { mean, std })
    }

    pub fn identity(signals: usize) -> Self {
        Self {
            mean: vec![0.0; signals],
            std: vec![1.0; signals],
        }
    }
}

/// Applies the configured per-signal normalization.
pub fn normalize(
    series: &OccasionSignalSeries,
    stats: &SignalStats,
    mode: Normalization,
) -> Result<OccasionSignalSeries> {
    match mode {
        Normalization::None => Ok(series.clone()),
        Normalization::Zscore => {
            let m = series.num_signals();
            if stats.mean.len() != m || stats.std.len() != m {
                return Err(MoefError::Data(format!(
                    "statistics cover {} signals, series has {m}",
                    stats.mean.len()
                )));
            }
            series.map_values(|s, _, x| Ok((x - stats.mean[s]) / (stats.std[s] + STATS_EPS)))
        }
        Normalization::Log1p => series.map_values(|s, t, x| {
            if x < 0.0 {
                Err(MoefError::Domain(format!(
                    "log1p of negative value {x} in signal {} at step {t}",
                    series.names()[s]
                )))
            } else {
                Ok(x.ln_1p())
            }
        }),
    }
}
