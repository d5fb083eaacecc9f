use serde::{Deserialize, Serialize};

use super::{fft_modulus, normalize, slide_windows, Normalization, OccasionSignalSeries, SignalStats, WindowingConfig};
use crate::error::{MoefError, Result};
use crate::numerics::Tensor;

/// Flattened per-window magnitude spectra, one row per window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSequence {
    values: Vec<f64>,
    width: usize,
    window_starts: Vec<usize>,
}

impl SpectrumSequence {
    pub fn new(values: Vec<f64>, width: usize, window_starts: Vec<usize>) -> Result<Self> {
        if width == 0 || values.len() != width * window_starts.len() {
            return Err(MoefError::dim(format!(
                "{} values do not form {} rows of width {width}",
                values.len(),
                window_starts.len()
            )));
        }
        Ok(Self {
            values,
            width,
            window_starts,
        })
    }

    pub fn len(&self) -> usize {
        self.window_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_starts.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.width..(t + 1) * self.width]
    }

    pub fn window_starts(&self) -> &[usize] {
        &self.window_starts
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.len(), self.width], self.values.clone())
    }

    /// Rows reordered as `order` (used by order-sensitivity checks).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let values = order.iter().flat_map(|&t| self.row(t).iter().copied()).collect();
        let starts = order.iter().map(|&t| self.window_starts[t]).collect();
        Self::new(values, self.width, starts)
    }
}

/// normalize → slide → per-window `|FFT|` → row-major flatten.
pub fn build_spectrum_sequence(
    series: &OccasionSignalSeries,
    cfg: &WindowingConfig,
    stats: &SignalStats,
) -> Result<SpectrumSequence> {
    cfg.validate()?;
    let normalized = normalize(series, stats, cfg.normalization)?;
    let windows = slide_windows(&normalized, cfg)?;
    let m = series.num_signals();
    let bins = cfg.bins();
    let mut values = Vec::with_capacity(windows.len() * m * bins);
    for w in &windows {
        let spectrum = fft_modulus(&w.values, w.rows, cfg.fft_points)?;
        for row in spectrum.chunks(cfg.fft_points) {
            values.extend_from_slice(&row[..bins]);
        }
    }
    let starts = windows.iter().map(|w| w.start).collect();
    SpectrumSequence::new(values, m * bins, starts)
}

/// The time-domain counterpart: log1p of the raw series, sliced into the
/// same windows and flattened to width `M · N_w`.
pub fn build_time_domain_sequence(
    series: &OccasionSignalSeries,
    cfg: &WindowingConfig,
) -> Result<SpectrumSequence> {
    let logged = normalize(series, &SignalStats::identity(series.num_signals()), Normalization::Log1p)?;
    let windows = slide_windows(&logged, cfg)?;
    let width = series.num_signals() * cfg.window_size;
    let starts = windows.iter().map(|w| w.start).collect();
    let values = windows.into_iter().flat_map(|w| w.values).collect();
    SpectrumSequence::new(values, width, starts)
}
