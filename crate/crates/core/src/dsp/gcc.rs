//! GCC-PHAT time-delay estimation.

use serde::{Deserialize, Serialize};

use super::fft::{fft_padded, ifft_real, Complex64};
use super::Waveform;
use crate::error::{Error, Result};

/// PHAT guard, relative to the largest cross-spectrum magnitude.
pub const PHAT_RELATIVE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Integer-lag argmax only.
    None,
    /// Three-point parabolic refinement around the peak.
    #[default]
    Parabolic,
}

/// Correlation sampled on integer lags `-max_lag ..= max_lag`.
///
/// `values[max_lag + k]` is the correlation at a delay of `k` samples, where a
/// positive delay means the second signal lags the first.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation {
    pub values: Vec<f64>,
    pub max_lag: usize,
    pub sample_rate: f64,
}

impl CrossCorrelation {
    pub fn at(&self, lag: i64) -> Option<f64> {
        let idx = lag + self.max_lag as i64;
        (idx >= 0).then(|| self.values.get(idx as usize).copied()).flatten()
    }

    /// Integer lag with the largest value; ties go to the smallest lag.
    pub fn argmax(&self) -> (i64, f64) {
        let (idx, val) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        (idx as i64 - self.max_lag as i64, val)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate {
    /// Seconds; positive when the second signal lags the first.
    pub tau_hat: f64,
    pub peak_lag: i64,
    pub sub_sample_fraction: f64,
    pub peak_value: f64,
}

/// `Xi · conj(Xj)` bin by bin.
pub fn cross_power_spectrum(xi: &[Complex64], xj: &[Complex64]) -> Result<Vec<Complex64>> {
    if xi.len() != xj.len() {
        return Err(Error::domain(format!(
            "spectrum length mismatch: {} vs {}",
            xi.len(),
            xj.len()
        )));
    }
    Ok(xi.iter().zip(xj).map(|(a, b)| a * b.conj()).collect())
}

/// Divides every bin by `max(|R|, epsilon)`.
pub fn phat_weight(r: &[Complex64], epsilon: f64) -> Vec<Complex64> {
    r.iter()
        .map(|&b| {
            let m = b.norm().max(epsilon);
            if m > 0.0 {
                b / m
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// PHAT-weighted correlation of `xi` and `xj` over `-max_lag ..= max_lag`.
pub fn gcc_phat_correlation(xi: &Waveform, xj: &Waveform, max_lag: usize) -> Result<CrossCorrelation> {
    if xi.sample_rate() != xj.sample_rate() {
        return Err(Error::domain(format!(
            "sample rate mismatch: {} vs {}",
            xi.sample_rate(),
            xj.sample_rate()
        )));
    }
    let len = xi.len().max(xj.len());
    if max_lag >= len {
        return Err(Error::domain(format!(
            "max_lag {max_lag} must be shorter than the signal ({len})"
        )));
    }
    for (name, w) in [("first", xi), ("second", xj)] {
        if w.samples().iter().all(|&s| s == 0.0) {
            return Err(Error::NoPeak(format!("{name} signal is all zeros")));
        }
    }

    let n = (xi.len() + xj.len()).next_power_of_two();
    let fi = fft_padded(xi.samples(), n)?;
    let fj = fft_padded(xj.samples(), n)?;
    let r = cross_power_spectrum(&fi.bins, &fj.bins)?;
    let peak_mag = r.iter().map(|b| b.norm()).fold(0.0, f64::max);
    let weighted = phat_weight(&r, PHAT_RELATIVE_EPSILON * peak_mag);
    let circular = ifft_real(&weighted);

    // circular[m] = Σ xi[t + m]·xj[t], which peaks at m = -delay.
    let values = (-(max_lag as i64)..=max_lag as i64)
        .map(|delay| circular[(-delay).rem_euclid(n as i64) as usize])
        .collect();
    Ok(CrossCorrelation {
        values,
        max_lag,
        sample_rate: xi.sample_rate(),
    })
}

/// Estimates how far `xj` lags `xi`.
pub fn gcc_phat(
    xi: &Waveform,
    xj: &Waveform,
    max_lag: usize,
    interpolation: Interpolation,
) -> Result<DelayEstimate> {
    let cc = gcc_phat_correlation(xi, xj, max_lag)?;
    let (lag, peak) = cc.argmax();
    if !peak.is_finite() {
        return Err(Error::NoPeak("correlation is not finite".into()));
    }
    let frac = match interpolation {
        Interpolation::None => 0.0,
        Interpolation::Parabolic => match (cc.at(lag - 1), cc.at(lag + 1)) {
            (Some(l), Some(r)) => parabolic_offset(l, peak, r),
            _ => 0.0,
        },
    };
    Ok(DelayEstimate {
        tau_hat: (lag as f64 + frac) / cc.sample_rate,
        peak_lag: lag,
        sub_sample_fraction: frac,
        peak_value: peak,
    })
}

/// Vertex of the parabola through `(-1, l)`, `(0, c)`, `(1, r)`, kept inside
/// the open interval `(-0.5, 0.5)`.
fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if !(denom < 0.0) {
        return 0.0;
    }
    let d = 0.5 * (l - r) / denom;
    const LIMIT: f64 = 0.5 - 1e-9;
    d.clamp(-LIMIT, LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::synth::{synthesize_delayed, Excitation};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Time-domain cross-correlation, normalised by the global signal
    /// energies, evaluated lag by lag.
    fn brute_force_argmax(xi: &[f64], xj: &[f64], max_lag: usize) -> i64 {
        let ei = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ej = xj.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut best = (0, f64::NEG_INFINITY);
        for lag in -(max_lag as i64)..=max_lag as i64 {
            let mut acc = 0.0;
            for (n, &a) in xi.iter().enumerate() {
                let m = n as i64 + lag;
                if m >= 0 && (m as usize) < xj.len() {
                    acc += a * xj[m as usize];
                }
            }
            let v = acc / (ei * ej);
            if v > best.1 {
                best = (lag, v);
            }
        }
        best.0
    }

    fn shifted(x: &[f64], k: i64) -> Vec<f64> {
        (0..x.len() as i64)
            .map(|n| {
                let m = n - k;
                if m >= 0 && (m as usize) < x.len() {
                    x[m as usize]
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn self_spectrum_is_real_nonnegative() {
        let x = fft_padded(&noise(16, 1), 16).unwrap();
        let r = cross_power_spectrum(&x.bins, &x.bins).unwrap();
        for (b, xb) in r.iter().zip(&x.bins) {
            assert!(b.im.abs() < 1e-12 && b.re >= 0.0);
            assert!((b.re - xb.norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_spectrum_with_conjugate_argument() {
        let x = fft_padded(&noise(16, 2), 16).unwrap().bins;
        let xc: Vec<Complex64> = x.iter().map(|b| b.conj()).collect();
        let r = cross_power_spectrum(&x, &xc).unwrap();
        for (b, a) in r.iter().zip(&x) {
            assert!((b - a * a).norm() < 1e-12);
        }
    }

    #[test]
    fn cross_spectrum_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand_spec = || -> Vec<Complex64> {
            (0..16)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        };
        let a = rand_spec();
        let b = rand_spec();
        let r = cross_power_spectrum(&a, &b).unwrap();
        for k in 0..16 {
            let re = a[k].re * b[k].re + a[k].im * b[k].im;
            let im = a[k].im * b[k].re - a[k].re * b[k].im;
            assert_eq!(r[k], Complex64::new(re, im));
        }
        assert!(cross_power_spectrum(&a, &b[..8]).is_err());
    }

    #[test]
    fn phat_unit_magnitude_and_zero_guard() {
        let r = vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)];
        let w = phat_weight(&r, 1e-12);
        assert!((w[0].norm() - 1.0).abs() < 1e-15);
        assert!((w[0].arg() - r[0].arg()).abs() < 1e-15);
        assert_eq!(w[1], Complex64::new(0.0, 0.0));
    }

    proptest! {
        #[test]
        fn phat_magnitudes_bounded(
            bins in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64),
            eps in 0.0f64..1.0,
        ) {
            let r: Vec<Complex64> = bins.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
            for (w, b) in phat_weight(&r, eps).iter().zip(&r) {
                prop_assert!(w.norm() <= 1.0 + 1e-12);
                if b.norm() >= eps && b.norm() > 0.0 {
                    prop_assert!((w.norm() - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn argmax_matches_brute_force(seed in any::<u64>(), len in 64usize..512, k in -32i64..=32) {
            let x = noise(len, seed);
            let y = shifted(&x, k);
            let wx = Waveform::new(x.clone(), 1.0).unwrap();
            let wy = Waveform::new(y.clone(), 1.0).unwrap();
            let est = gcc_phat(&wx, &wy, 40, Interpolation::None).unwrap();
            prop_assert_eq!(est.peak_lag, k);
            prop_assert_eq!(brute_force_argmax(&x, &y, 40), est.peak_lag);
        }

        #[test]
        fn swapping_arguments_negates_lag(seed in any::<u64>(), k in -20i64..=20) {
            let x = noise(256, seed);
            let y = shifted(&x, k);
            let wx = Waveform::new(x, 1.0).unwrap();
            let wy = Waveform::new(y, 1.0).unwrap();
            let a = gcc_phat(&wx, &wy, 32, Interpolation::None).unwrap();
            let b = gcc_phat(&wy, &wx, 32, Interpolation::None).unwrap();
            prop_assert_eq!(a.peak_lag, -b.peak_lag);
        }

        #[test]
        fn positive_scaling_keeps_peak(seed in any::<u64>(), k in -20i64..=20, g in 1e-3f64..1e3) {
            let x = noise(256, seed);
            let y = shifted(&x, k);
            let wx = Waveform::new(x, 1.0).unwrap();
            let wy = Waveform::new(y, 1.0).unwrap();
            let a = gcc_phat(&wx, &wy, 32, Interpolation::None).unwrap();
            let b = gcc_phat(&wx.scaled(g), &wy, 32, Interpolation::None).unwrap();
            let c = gcc_phat(&wx, &wy.scaled(g), 32, Interpolation::None).unwrap();
            prop_assert_eq!(a.peak_lag, b.peak_lag);
            prop_assert_eq!(a.peak_lag, c.peak_lag);
        }
    }

    #[test]
    fn identical_signals_have_zero_lag() {
        let w = Waveform::new(noise(300, 5), 8000.0).unwrap();
        let est = gcc_phat(&w, &w, 20, Interpolation::Parabolic).unwrap();
        assert_eq!(est.peak_lag, 0);
        assert!(est.sub_sample_fraction.abs() < 1e-9);
    }

    #[test]
    fn integer_shift_of_noise_burst() {
        let x = noise(1024, 6);
        let y = shifted(&x, 5);
        let est = gcc_phat(
            &Waveform::new(x.clone(), 1.0).unwrap(),
            &Waveform::new(y.clone(), 1.0).unwrap(),
            32,
            Interpolation::None,
        )
        .unwrap();
        assert_eq!(est.peak_lag, 5);
        assert_eq!(brute_force_argmax(&x, &y, 32), 5);
    }

    #[test]
    fn fractional_chirp_delay_parabolic() {
        let fs = 48_000.0;
        let src = Excitation::default().render(fs, 0.02).unwrap();
        let delayed = synthesize_delayed(&src, 3.4 / fs, 0.0, 0).unwrap();
        let est = gcc_phat(&src, &delayed, 16, Interpolation::Parabolic).unwrap();
        let samples = est.tau_hat * fs;
        assert!((2.9..=3.9).contains(&samples), "{samples}");
        assert!(est.sub_sample_fraction.abs() < 0.5);
    }

    #[test]
    fn silent_input_has_no_peak() {
        let z = Waveform::new(vec![0.0; 64], 1.0).unwrap();
        let n = Waveform::new(noise(64, 1), 1.0).unwrap();
        assert!(matches!(gcc_phat(&z, &n, 8, Interpolation::None), Err(Error::NoPeak(_))));
    }

    #[test]
    fn rejects_bad_arguments() {
        let a = Waveform::new(noise(64, 1), 1.0).unwrap();
        let b = Waveform::new(noise(64, 2), 2.0).unwrap();
        assert!(gcc_phat(&a, &b, 8, Interpolation::None).is_err());
        assert!(gcc_phat(&a, &a, 64, Interpolation::None).is_err());
    }

    #[test]
    fn parabolic_vertex() {
        // y = -(x - 0.25)^2
        let f = |x: f64| -(x - 0.25) * (x - 0.25);
        assert!((parabolic_offset(f(-1.0), f(0.0), f(1.0)) - 0.25).abs() < 1e-12);
        assert_eq!(parabolic_offset(1.0, 1.0, 1.0), 0.0);
    }
}
