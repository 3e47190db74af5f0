use std::cell::RefCell;

use rustfft::FftPlanner;

pub use rustfft::num_complex::Complex64;

use super::Waveform;
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Transform length for linear (non-circular) correlation of two signals.
pub fn correlation_fft_len(len: usize) -> usize {
    (2 * len.max(1)).next_power_of_two()
}

/// Spectrum of a zero-padded real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    /// Length of the signal before padding.
    pub signal_len: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Inverse transform, truncated to the original signal length.
    pub fn inverse(&self) -> Vec<f64> {
        let mut out = ifft_real(&self.bins);
        out.truncate(self.signal_len);
        out
    }
}

/// Forward transform padded to [`correlation_fft_len`].
pub fn fft(signal: &Waveform) -> Result<Spectrum> {
    let n = correlation_fft_len(signal.len());
    fft_padded(signal.samples(), n)
}

/// Forward transform of `samples` zero-padded to `n` points.
pub fn fft_padded(samples: &[f64], n: usize) -> Result<Spectrum> {
    if samples.is_empty() {
        return Err(Error::domain("cannot transform an empty signal"));
    }
    if n < samples.len() {
        return Err(Error::domain(format!(
            "transform length {n} shorter than signal ({})",
            samples.len()
        )));
    }
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n).process(&mut buf));
    Ok(Spectrum {
        bins: buf,
        signal_len: samples.len(),
    })
}

/// Inverse transform scaled by `1/n`, real part only.
pub fn ifft_real(bins: &[Complex64]) -> Vec<f64> {
    let n = bins.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf = bins.to_vec();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(&mut buf));
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}
