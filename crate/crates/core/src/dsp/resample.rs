//! Windowed-sinc sample-rate conversion.
//!
//! Output sample `n` sits at input position `n · fs_in / fs_out`. When both
//! rates are whole numbers of hertz the fractional part of that position
//! cycles through `L = fs_out / gcd` values, so one tap set per phase is
//! computed once and reused (a polyphase bank). Otherwise taps are computed
//! per output sample.

use std::f64::consts::PI;

use super::synth::blackman;
use super::Waveform;
use crate::error::{Error, Result};

/// Kernel zero crossings on each side, measured at the cutoff frequency.
const ZERO_CROSSINGS: f64 = 32.0;
/// Passband edge as a fraction of the lower Nyquist frequency.
const CUTOFF_FRACTION: f64 = 0.9;
const MAX_PHASES: u64 = 4096;

struct Kernel {
    /// Cutoff in cycles per input sample.
    cutoff: f64,
    /// Half-width in input samples.
    half_width: f64,
}

impl Kernel {
    fn new(fs_in: f64, fs_out: f64) -> Self {
        let cutoff = CUTOFF_FRACTION * 0.5 * (fs_out / fs_in).min(1.0);
        Kernel {
            cutoff,
            half_width: ZERO_CROSSINGS / (2.0 * cutoff),
        }
    }

    /// Taps for an output sample at input position `base + frac`, as
    /// `(first_input_index, weights)`, normalised to unit DC gain.
    fn taps(&self, frac: f64) -> (i64, Vec<f64>) {
        let first = (frac - self.half_width).ceil() as i64;
        let last = (frac + self.half_width).floor() as i64;
        let mut w: Vec<f64> = (first..=last)
            .map(|k| {
                let t = frac - k as f64;
                let arg = 2.0 * self.cutoff * t;
                let s = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                s * blackman(t / self.half_width)
            })
            .collect();
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        (first, w)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn as_whole_hz(f: f64) -> Option<u64> {
    let r = f.round();
    ((f - r).abs() < 1e-9 && (1.0..1e12).contains(&r)).then_some(r as u64)
}

fn apply(x: &[f64], base: i64, first: i64, weights: &[f64]) -> f64 {
    let start = base + first;
    weights
        .iter()
        .enumerate()
        .filter_map(|(j, w)| {
            let k = start + j as i64;
            (k >= 0 && (k as usize) < x.len()).then(|| w * x[k as usize])
        })
        .sum()
}

/// Converts `x` to `target_fs`.
pub fn resample(x: &Waveform, target_fs: f64) -> Result<Waveform> {
    if !(target_fs.is_finite() && target_fs > 0.0) {
        return Err(Error::domain(format!("target rate must be > 0, got {target_fs}")));
    }
    let fs = x.sample_rate();
    if target_fs == fs {
        return Ok(x.clone());
    }
    let input = x.samples();
    let n_out = ((input.len() as f64) * target_fs / fs).ceil().max(1.0) as usize;
    let kernel = Kernel::new(fs, target_fs);

    let out: Vec<f64> = match (as_whole_hz(fs), as_whole_hz(target_fs)) {
        (Some(fi), Some(fo)) if fo / gcd(fi, fo) <= MAX_PHASES => {
            let g = gcd(fi, fo);
            let (up, down) = (fo / g, fi / g);
            let bank: Vec<(i64, Vec<f64>)> = (0..up).map(|p| kernel.taps(p as f64 / up as f64)).collect();
            (0..n_out as u64)
                .map(|n| {
                    let pos = n * down;
                    let (first, w) = &bank[(pos % up) as usize];
                    apply(input, (pos / up) as i64, *first, w)
                })
                .collect()
        }
        _ => (0..n_out)
            .map(|n| {
                let pos = n as f64 * fs / target_fs;
                let base = pos.floor();
                let (first, w) = kernel.taps(pos - base);
                apply(input, base as i64, first, &w)
            })
            .collect(),
    };
    Waveform::new(out, target_fs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::fft::fft_padded;

    fn tone(freq: f64, fs: f64, secs: f64) -> Waveform {
        let n = (fs * secs) as usize;
        Waveform::new(
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect(),
            fs,
        )
        .unwrap()
    }

    /// Peak frequency and amplitude of the interior of `w`, via a zero-padded
    /// FFT with 0.1 Hz bins and a Hann window.
    fn spectral_peak(w: &Waveform) -> (f64, f64) {
        let skip = 500;
        let body = &w.samples()[skip..w.len() - skip];
        let n = body.len();
        let win: Vec<f64> = body
            .iter()
            .enumerate()
            .map(|(i, v)| v * (0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
            .collect();
        let size = ((w.sample_rate() * 10.0) as usize).next_power_of_two();
        let s = fft_padded(&win, size).unwrap();
        let (k, mag) = (1..size / 2)
            .map(|k| (k, s.bins[k].norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        // Hann coherent gain 0.5, one-sided amplitude factor 2
        (k as f64 * w.sample_rate() / size as f64, mag * 2.0 / (0.5 * n as f64))
    }

    #[test]
    fn identity_when_rates_match() {
        let w = tone(100.0, 1000.0, 0.1);
        assert_eq!(resample(&w, 1000.0).unwrap(), w);
    }

    #[test]
    fn in_band_tone_survives_downsampling() {
        let out = resample(&tone(1000.0, 48_000.0, 1.0), 10_000.0).unwrap();
        assert_eq!(out.sample_rate(), 10_000.0);
        assert_eq!(out.len(), 10_000);
        let (f, a) = spectral_peak(&out);
        assert!((f - 1000.0).abs() <= 1.0, "{f}");
        assert!((a - 1.0).abs() < 0.01, "{a}");
        // Direct RMS check on the interior: sine RMS is 1/√2.
        let body = &out.samples()[500..9500];
        let rms = (body.iter().map(|v| v * v).sum::<f64>() / body.len() as f64).sqrt();
        assert!((rms * 2f64.sqrt() - 1.0).abs() < 0.01, "{rms}");
    }

    #[test]
    fn out_of_band_tone_is_attenuated() {
        let out = resample(&tone(6000.0, 48_000.0, 1.0), 10_000.0).unwrap();
        let body = &out.samples()[500..9500];
        let rms = (body.iter().map(|v| v * v).sum::<f64>() / body.len() as f64).sqrt();
        let db = 20.0 * (rms * 2f64.sqrt()).log10();
        assert!(db <= -20.0, "{db} dB");
    }

    #[test]
    fn upsampling_and_irrational_ratio() {
        let up = resample(&tone(500.0, 8000.0, 0.5), 44_100.0).unwrap();
        let (f, a) = spectral_peak(&up);
        assert!((f - 500.0).abs() < 0.5 && (a - 1.0).abs() < 0.01, "{f} {a}");
        let odd = resample(&tone(500.0, 8000.0, 0.5), 12_345.678).unwrap();
        let (f, a) = spectral_peak(&odd);
        assert!((f - 500.0).abs() < 0.5 && (a - 1.0).abs() < 0.01, "{f} {a}");
    }

    #[test]
    fn invalid_target() {
        assert!(resample(&tone(1.0, 10.0, 1.0), 0.0).is_err());
    }
}
