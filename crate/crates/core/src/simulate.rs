//! Event-based and waveform-based simulation of the array.
//!
//! Event mode computes each microphone's recorded arrival time analytically:
//! the true arrival time is pushed to the next sampling instant of that
//! microphone's clock (which may be shifted by a phase offset), then optional
//! Gaussian timing noise is added. Waveform mode renders per-microphone
//! signals and measures delays with GCC-PHAT instead.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, Excitation, Interpolation, Waveform};
use crate::error::{Error, Result};
use crate::geometry::{true_toa, ArrayGeometry, Medium, Point2, SamplingSpec, SourcePosition};
use crate::locate::{multilaterate, MultilaterationProblem};
use crate::seeding::{derive_seed, rng_for, Stream};

/// `|τ31|` below this makes the ratio feature a clamped value.
pub const RATIO_EPSILON: f64 = 1e-9;
const RATIO_GAIN: f64 = 1e9;
const RATIO_CAP: f64 = 1e6;

/// The two delays relative to the reference microphone, plus their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdoaPair {
    pub tau21: f64,
    pub tau31: f64,
    pub ratio: f64,
}

impl TdoaPair {
    pub fn new(tau21: f64, tau31: f64) -> Self {
        TdoaPair {
            tau21,
            tau31,
            ratio: tdoa_ratio(tau21, tau31),
        }
    }

    /// Delays of microphones 1 and 2 relative to microphone 0.
    pub fn from_arrival_times(t: [f64; 3]) -> Self {
        TdoaPair::new(t[1] - t[0], t[2] - t[0])
    }

    pub fn features(&self) -> [f64; 3] {
        [self.tau21, self.tau31, self.ratio]
    }

    pub fn is_finite(&self) -> bool {
        self.tau21.is_finite() && self.tau31.is_finite()
    }
}

/// `τ21 / τ31`, or `sign(τ21)·min(1e9·|τ21|, 1e6)` when `|τ31| <= 1e-9`.
pub fn tdoa_ratio(tau21: f64, tau31: f64) -> f64 {
    if tau31.abs() > RATIO_EPSILON {
        tau21 / tau31
    } else if tau21 == 0.0 {
        0.0
    } else {
        tau21.signum() * (RATIO_GAIN * tau21.abs()).min(RATIO_CAP)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    #[default]
    Event,
    Waveform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformParams {
    pub excitation: Excitation,
    /// Noise standard deviation relative to the excitation RMS.
    pub noise_relative: f64,
    pub interpolation: Interpolation,
}

impl Default for WaveformParams {
    fn default() -> Self {
        WaveformParams {
            excitation: Excitation::default(),
            noise_relative: 0.0,
            interpolation: Interpolation::Parabolic,
        }
    }
}

/// Where sources are placed: uniform over an annulus centred on the array
/// centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceDomain {
    pub radius: f64,
    pub exclusion_radius: f64,
}

impl SourceDomain {
    pub fn new(radius: f64, exclusion_radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::domain(format!("domain radius must be > 0, got {radius}")));
        }
        if !(exclusion_radius >= 0.0 && exclusion_radius < radius) {
            return Err(Error::domain(format!(
                "exclusion radius {exclusion_radius} must be in [0, {radius})"
            )));
        }
        Ok(SourceDomain {
            radius,
            exclusion_radius,
        })
    }
}

impl Default for SourceDomain {
    fn default() -> Self {
        SourceDomain {
            radius: 100.0,
            exclusion_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub geometry: ArrayGeometry,
    pub medium: Medium,
    pub sampling: SamplingSpec,
    /// Radius of the uniform disk each microphone may be displaced within.
    pub placement_tolerance: f64,
    /// Standard deviation of the Gaussian added to each recorded arrival time.
    pub toa_noise_sigma: f64,
    pub mode: SimMode,
    pub waveform: WaveformParams,
    pub domain: SourceDomain,
    pub master_seed: u64,
}

impl SimConfig {
    /// Equilateral array, event mode, no noise, no jitter.
    pub fn new(spacing: f64, sample_rate: f64, master_seed: u64) -> Result<Self> {
        Ok(SimConfig {
            geometry: ArrayGeometry::equilateral(spacing)?,
            medium: Medium::default(),
            sampling: SamplingSpec::new(sample_rate)?,
            placement_tolerance: 0.0,
            toa_noise_sigma: 0.0,
            mode: SimMode::Event,
            waveform: WaveformParams::default(),
            domain: SourceDomain::default(),
            master_seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.toa_noise_sigma >= 0.0 && self.toa_noise_sigma.is_finite()) {
            return Err(Error::domain("toa_noise_sigma must be >= 0"));
        }
        if !(self.placement_tolerance >= 0.0 && self.placement_tolerance.is_finite()) {
            return Err(Error::domain("placement_tolerance must be >= 0"));
        }
        if !(self.waveform.noise_relative >= 0.0) {
            return Err(Error::domain("waveform noise must be >= 0"));
        }
        SourceDomain::new(self.domain.radius, self.domain.exclusion_radius)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub estimated: TdoaPair,
    pub true_tdoa: TdoaPair,
    pub source: SourcePosition,
    pub sample_index: u64,
}

/// Draws a point uniformly (by area) from `domain`, centred on `centre`.
pub fn sample_source<R: Rng + ?Sized>(domain: &SourceDomain, centre: Point2, rng: &mut R) -> SourcePosition {
    let r0 = domain.exclusion_radius * domain.exclusion_radius;
    let r1 = domain.radius * domain.radius;
    let r = (r0 + rng.random::<f64>() * (r1 - r0)).sqrt();
    let a = std::f64::consts::TAU * rng.random::<f64>();
    SourcePosition::new(centre.x + r * a.cos(), centre.y + r * a.sin())
}

/// Seeded uniform draw from the disk of `radius` around the array centroid.
pub fn sample_source_uniform_disk(
    geometry: &ArrayGeometry,
    domain: &SourceDomain,
    rng_seed: u64,
) -> SourcePosition {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    sample_source(domain, geometry.centroid(), &mut rng)
}

/// The source used for batch row `index`.
pub fn source_for_index(config: &SimConfig, index: u64) -> SourcePosition {
    let mut rng = rng_for(config.master_seed, index, Stream::Source);
    sample_source(&config.domain, config.geometry.centroid(), &mut rng)
}

/// Arrival time recorded by a microphone whose sampling instants are
/// `phase + k/fs`: the first instant at or after the true arrival.
pub fn quantize_toa(toa: f64, sample_rate: f64, phase: f64) -> f64 {
    ((toa - phase) * sample_rate).ceil() / sample_rate + phase
}

pub fn simulate_observation(config: &SimConfig, source: SourcePosition, sample_index: u64) -> Result<Observation> {
    simulate_with_sampling(config, &config.sampling, source, sample_index)
}

fn simulate_with_sampling(
    config: &SimConfig,
    sampling: &SamplingSpec,
    source: SourcePosition,
    sample_index: u64,
) -> Result<Observation> {
    let seed = config.master_seed;
    let mut jitter_rng = rng_for(seed, sample_index, Stream::Jitter);
    let actual = config
        .geometry
        .with_placement_jitter(config.placement_tolerance, &mut jitter_rng)?;
    let toa = true_toa(&actual, &config.medium, source)?;
    let true_tdoa = TdoaPair::from_arrival_times(toa);

    let estimated = match config.mode {
        SimMode::Event => {
            let fs = sampling.sample_rate();
            let phases = sampling.phase_offsets();
            let mut recorded = [0.0; 3];
            for i in 0..3 {
                recorded[i] = quantize_toa(toa[i], fs, phases[i]);
            }
            if config.toa_noise_sigma > 0.0 {
                let normal =
                    Normal::new(0.0, config.toa_noise_sigma).map_err(|e| Error::domain(e.to_string()))?;
                let mut rng = rng_for(seed, sample_index, Stream::ToaNoise);
                for r in &mut recorded {
                    *r += normal.sample(&mut rng);
                }
            }
            TdoaPair::from_arrival_times(recorded)
        }
        SimMode::Waveform => waveform_tdoa(config, sampling, toa, sample_index)?,
    };

    Ok(Observation {
        estimated,
        true_tdoa,
        source,
        sample_index,
    })
}

/// Lag window wide enough for any physical delay across the array.
pub fn default_max_lag(geometry: &ArrayGeometry, medium: &Medium, sample_rate: f64) -> usize {
    (geometry.max_pair_distance() / medium.speed_of_sound() * sample_rate).ceil() as usize + 2
}

/// Renders the three microphone channels for arrival times `toa`.
///
/// Only relative timing matters, so the earliest arrival lands a few samples
/// after the start of the buffer.
pub fn render_channels(
    excitation: &Excitation,
    sampling: &SamplingSpec,
    toa: [f64; 3],
    noise_relative: f64,
    seed: u64,
) -> Result<[Waveform; 3]> {
    let fs = sampling.sample_rate();
    let spread = toa.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - toa.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let lead = 4.0 / fs;
    let pad = spread + lead + (dsp::SINC_HALF_WIDTH as f64 + 8.0) / fs;
    let base = excitation.render(fs, pad)?;
    let sigma = noise_relative * base.rms();
    let t0 = toa.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let phases = sampling.phase_offsets();
    let mut out = Vec::with_capacity(3);
    for i in 0..3 {
        // Sample k of microphone i is taken at phase_i + k/fs.
        let delay = toa[i] - t0 + lead - phases[i];
        let noise_seed = derive_seed(seed, i as u64, Stream::Waveform);
        out.push(dsp::synthesize_delayed(&base, delay.max(0.0), sigma, noise_seed)?);
    }
    Ok(out.try_into().expect("three channels"))
}

fn waveform_tdoa(config: &SimConfig, sampling: &SamplingSpec, toa: [f64; 3], index: u64) -> Result<TdoaPair> {
    let seed = derive_seed(config.master_seed, index, Stream::Waveform);
    let ch = render_channels(
        &config.waveform.excitation,
        sampling,
        toa,
        config.waveform.noise_relative,
        seed,
    )?;
    let max_lag = default_max_lag(&config.geometry, &config.medium, sampling.sample_rate());
    let phases = sampling.phase_offsets();
    let d21 = dsp::gcc_phat(&ch[0], &ch[1], max_lag, config.waveform.interpolation)?;
    let d31 = dsp::gcc_phat(&ch[0], &ch[2], max_lag, config.waveform.interpolation)?;
    Ok(TdoaPair::new(
        d21.tau_hat + phases[1] - phases[0],
        d31.tau_hat + phases[2] - phases[0],
    ))
}

/// `n` observations, row `i` fully determined by `(master_seed, i)`.
pub fn run_batch(config: &SimConfig, n: usize) -> Result<Vec<Observation>> {
    if n == 0 {
        return Err(Error::domain("batch size must be >= 1"));
    }
    config.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_observation(config, source_for_index(config, i), i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetTrial {
    pub index: u64,
    /// Phase offset of microphone 1, as a fraction of the sampling period.
    pub offset2_level: f64,
    /// Phase offset of microphone 2, as a fraction of the sampling period.
    pub offset3_level: f64,
    pub position_error_m: f64,
}

/// Default offset levels, in sampling periods.
pub const DEFAULT_OFFSET_LEVELS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

/// Sampling-offset experiment: each trial assigns the two non-reference
/// microphones a random offset level, simulates the source of batch row `i`,
/// localizes it and records the Euclidean position error.
pub fn run_offset_experiment(
    config: &SimConfig,
    n: usize,
    levels: &[f64],
    radius_bound: f64,
) -> Result<Vec<OffsetTrial>> {
    if n == 0 {
        return Err(Error::domain("trial count must be >= 1"));
    }
    if levels.is_empty() || levels.iter().any(|l| !(0.0..1.0).contains(l)) {
        return Err(Error::domain("offset levels must be a non-empty subset of [0, 1)"));
    }
    config.validate()?;
    let fs = config.sampling.sample_rate();
    let period = 1.0 / fs;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(config.master_seed, i, Stream::Offsets);
            let l2 = levels[rng.random_range(0..levels.len())];
            let l3 = levels[rng.random_range(0..levels.len())];
            let base = config.sampling.phase_offsets()[0];
            let sampling = SamplingSpec::with_offsets(fs, [base, l2 * period, l3 * period])?;
            let source = source_for_index(config, i);
            let obs = simulate_with_sampling(config, &sampling, source, i)?;
            let problem =
                MultilaterationProblem::new(config.geometry, config.medium, obs.estimated, radius_bound)?;
            let est = multilaterate(&problem)?;
            Ok(OffsetTrial {
                index: i,
                offset2_level: l2,
                offset3_level: l3,
                position_error_m: est.position.distance(source.point()),
            })
        })
        .collect()
}
