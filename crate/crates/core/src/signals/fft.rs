//! Iterative radix-2 decimation-in-time FFT.

use num_complex::Complex64;

use crate::error::{MoefError, Result};

/// In-place forward DFT, `X_k = Σ_t x_t · e^{−2πi·kt/n}`. `n` must be a power of two.
pub fn fft_in_place(buf: &mut [Complex64]) -> Result<()> {
    let n = buf.len();
    if !n.is_power_of_two() {
        return Err(MoefError::Config(format!("FFT length {n} is not a power of two")));
    }
    if n == 1 {
        return Ok(());
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = -2.0 * std::f64::consts::PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                // twiddles from the angle directly; a running product drifts
                let w = Complex64::from_polar(1.0, step * k as f64);
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
    Ok(())
}

/// Per-row `|DFT|` of an `M × N_w` row-major window, each row zero-padded on
/// the right to `n_fft` points. Returns an `M × n_fft` row-major matrix.
pub fn fft_modulus(window: &[f64], rows: usize, n_fft: usize) -> Result<Vec<f64>> {
    if rows == 0 || window.len() % rows != 0 {
        return Err(MoefError::dim(format!(
            "window of {} values cannot have {rows} rows",
            window.len()
        )));
    }
    let width = window.len() / rows;
    if !n_fft.is_power_of_two() || n_fft < width {
        return Err(MoefError::Config(format!(
            "FFT points {n_fft} must be a power of two no smaller than the window size {width}"
        )));
    }
    let mut out = Vec::with_capacity(rows * n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for row in window.chunks(width) {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (c, &v) in buf.iter_mut().zip(row) {
            c.re = v;
        }
        fft_in_place(&mut buf)?;
        out.extend(buf.iter().map(|c| c.norm()));
    }
    Ok(out)
}
