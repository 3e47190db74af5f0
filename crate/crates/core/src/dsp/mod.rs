//! Waveform-level signal processing.

mod fft;
mod gcc;
mod resample;
mod synth;

pub use fft::{correlation_fft_len, fft, fft_padded, ifft_real, Complex64, Spectrum};
pub use gcc::{
    cross_power_spectrum, gcc_phat, gcc_phat_correlation, phat_weight, CrossCorrelation, DelayEstimate,
    Interpolation, PHAT_RELATIVE_EPSILON,
};
pub use resample::resample;
pub use synth::{add_noise, synthesize_delayed, Excitation, SINC_HALF_WIDTH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real, uniformly sampled signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("waveform must have at least one sample"));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::domain(format!("sample rate must be > 0, got {sample_rate}")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::domain("waveform samples must be finite"));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}
