use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings on each side of the fractional-delay kernel.
pub const SINC_HALF_WIDTH: usize = 32;

/// Test excitation emitted by the simulated source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Excitation {
    /// Linear frequency sweep.
    Chirp {
        start_hz: f64,
        end_hz: f64,
        duration_s: f64,
    },
    /// Uniform white noise in [-1, 1).
    NoiseBurst { duration_s: f64, seed: u64 },
    Tone { freq_hz: f64, duration_s: f64 },
}

impl Default for Excitation {
    fn default() -> Self {
        Excitation::Chirp {
            start_hz: 500.0,
            end_hz: 3000.0,
            duration_s: 0.1,
        }
    }
}

impl Excitation {
    pub fn duration(&self) -> f64 {
        match *self {
            Excitation::Chirp { duration_s, .. }
            | Excitation::NoiseBurst { duration_s, .. }
            | Excitation::Tone { duration_s, .. } => duration_s,
        }
    }

    /// Unit-amplitude excitation followed by `trailing_pad_s` of silence.
    pub fn render(&self, sample_rate: f64, trailing_pad_s: f64) -> Result<Waveform> {
        let duration = self.duration();
        if !(duration > 0.0) || !(trailing_pad_s >= 0.0) {
            return Err(Error::domain("excitation duration must be > 0 and padding >= 0"));
        }
        let n = (duration * sample_rate).round() as usize;
        let pad = (trailing_pad_s * sample_rate).ceil() as usize;
        let mut out = Vec::with_capacity(n + pad);
        match *self {
            Excitation::Chirp {
                start_hz, end_hz, ..
            } => {
                let k = (end_hz - start_hz) / duration;
                out.extend((0..n).map(|i| {
                    let t = i as f64 / sample_rate;
                    (2.0 * PI * (start_hz * t + 0.5 * k * t * t)).sin()
                }));
            }
            Excitation::NoiseBurst { seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                out.extend((0..n).map(|_| rng.random_range(-1.0..1.0)));
            }
            Excitation::Tone { freq_hz, .. } => {
                out.extend((0..n).map(|i| (2.0 * PI * freq_hz * i as f64 / sample_rate).sin()));
            }
        }
        out.resize(n + pad, 0.0);
        Waveform::new(out, sample_rate)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Blackman window on `[-1, 1]`.
pub(crate) fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos()
    }
}

/// Delays `source` by `delay` seconds with windowed-sinc interpolation, then
/// adds white Gaussian noise of standard deviation `noise_sigma`.
///
/// The output keeps the input length; content shifted past the end is lost.
pub fn synthesize_delayed(source: &Waveform, delay: f64, noise_sigma: f64, rng_seed: u64) -> Result<Waveform> {
    let fs = source.sample_rate();
    let shift = delay * fs;
    let len = source.len();
    if !(delay >= 0.0) || !(shift < len as f64) {
        return Err(Error::domain(format!(
            "delay {delay} s ({shift} samples) outside [0, {len})"
        )));
    }
    let x = source.samples();
    let whole = shift.floor();
    let frac = shift - whole;
    let whole = whole as usize;

    let mut y = vec![0.0; len];
    if frac == 0.0 {
        y[whole..].copy_from_slice(&x[..len - whole]);
    } else {
        let w = SINC_HALF_WIDTH as f64;
        for (n, out) in y.iter_mut().enumerate() {
            // y[n] = Σ x[k]·h(n - shift - k), support |n - shift - k| < W
            let centre = n as f64 - shift;
            let lo = (centre - w).ceil().max(0.0) as usize;
            let hi = (centre + w).floor();
            if hi < 0.0 {
                continue;
            }
            let hi = (hi as usize).min(len - 1);
            let mut acc = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let t = centre - k as f64;
                acc += xk * sinc(t) * blackman(t / w);
            }
            *out = acc;
        }
    }
    let mut out = Waveform::new(y, fs)?;
    if noise_sigma > 0.0 {
        out = add_noise(&out, noise_sigma, rng_seed)?;
    }
    Ok(out)
}

/// Adds independent N(0, sigma²) samples.
pub fn add_noise(x: &Waveform, sigma: f64, rng_seed: u64) -> Result<Waveform> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let samples = x.samples().iter().map(|s| s + normal.sample(&mut rng)).collect();
    Waveform::new(samples, x.sample_rate())
}
