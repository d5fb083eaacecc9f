//! Occasion signals: the raw series, sliding windows, and their spectra.

mod fft;
mod series;
mod spectrum;
mod window;

pub use fft::{fft_in_place, fft_modulus};
pub use series::OccasionSignalSeries;
pub use spectrum::{build_spectrum_sequence, build_time_domain_sequence, SpectrumSequence};
pub use window::{normalize, slide_windows, Normalization, SignalStats, SignalWindow, WindowingConfig};

#[cfg(test)]
mod tests;
