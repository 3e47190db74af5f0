//! Run configuration: one TOML file with sections, plus `section.key=value`
//! overrides that take precedence over the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DEFAULT_TRAIN_FRACTION;
use crate::dsp::{Excitation, Interpolation};
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Medium, SamplingSpec};
use crate::locate::{PipelineOptions, DEFAULT_RADIUS_BOUND};
use crate::models::{ForestParams, MlpParams};
use crate::simulate::{SimConfig, SimMode, SourceDomain, WaveformParams, DEFAULT_OFFSET_LEVELS};

/// Every configuration key, with its default. Shown by `--help`.
pub const CONFIG_HELP: &str = "\
Configuration keys (TOML file via --config, or --set section.key=value; --set wins):
  [array]
    array.spacing                  microphone spacing d in metres (0.1)
    array.placement_tolerance      radius of per-microphone placement jitter, m (0)
  [medium]  (give at most one of the two)
    medium.speed_of_sound          speed of sound c in m/s (343 when neither is set)
    medium.temperature_c           air temperature; c = 331.3 + 0.606*T
  [sampling]
    sampling.rate                  sample rate fs in Hz (10000)
    sampling.phase_offsets         per-microphone sampling phase offsets, s ([0, 0, 0])
  [simulation]
    simulation.n                   number of simulated sources (24000)
    simulation.seed                master seed for sources, jitter and noise (7)
    simulation.mode                \"event\" (analytic arrival times) or \"waveform\" (event)
    simulation.toa_noise_sigma     std-dev of Gaussian arrival-time noise, s (0)
    simulation.domain_radius       sources are uniform in this disk around the array, m (100)
    simulation.exclusion_radius    inner radius kept free of sources, m (1)
    simulation.waveform_noise      waveform mode: noise std-dev relative to signal RMS (0)
    simulation.interpolation       waveform mode: GCC-PHAT peak refinement, \"none\" or \"parabolic\"
    simulation.excitation.kind     waveform mode: \"chirp\", \"noise-burst\" or \"tone\" (chirp)
    simulation.excitation.start_hz   chirp start frequency (500)
    simulation.excitation.end_hz     chirp end frequency (3000)
    simulation.excitation.duration_s excitation length in seconds (0.1)
    simulation.excitation.seed       noise-burst generator seed
    simulation.excitation.freq_hz    tone frequency
  [split]
    split.train_fraction           share of rows used for training (0.8)
    split.seed                     shuffle seed for the train/validation split (0)
  [forest]
    forest.n_trees                 number of trees (100)
    forest.max_depth               maximum tree depth (12)
    forest.min_samples_leaf        minimum rows per leaf (2)
    forest.features_per_split      candidate features per split (floor(sqrt(3)) = 1)
    forest.bootstrap               resample rows per tree (true)
    forest.n_bins                  azimuth classes, 12 (30 deg) or 24 (15 deg) (12)
    forest.seed                    forest seed (0)
  [mlp]
    mlp.hidden                     hidden layer widths ([64, 64])
    mlp.learning_rate              Adam step size (0.001)
    mlp.beta1                      Adam first-moment decay (0.9)
    mlp.beta2                      Adam second-moment decay (0.999)
    mlp.adam_epsilon               Adam denominator guard (1e-8)
    mlp.batch_size                 mini-batch size (64)
    mlp.epochs                     training epochs (300)
    mlp.target                     \"sin-cos\" or \"raw\" (sin-cos)
    mlp.seed                       initialisation and shuffle seed (0)
  [locate]
    locate.radius_bound            multilateration search radius around the array, m (150)
    locate.interpolation           GCC-PHAT peak refinement for audio, \"none\" or \"parabolic\"
    locate.max_lag                 GCC-PHAT lag window in samples (derived from geometry)
  [offsets]
    offsets.n                      number of sampling-offset trials (10000)
    offsets.levels                 offset levels in sampling periods ([0, 0.25, 0.5, 0.75])
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub spacing: f64,
    pub placement_tolerance: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        ArraySection {
            spacing: 0.1,
            placement_tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediumSection {
    pub speed_of_sound: Option<f64>,
    pub temperature_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub rate: f64,
    pub phase_offsets: [f64; 3],
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            rate: 10_000.0,
            phase_offsets: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub n: usize,
    pub seed: u64,
    pub mode: SimMode,
    pub toa_noise_sigma: f64,
    pub domain_radius: f64,
    pub exclusion_radius: f64,
    pub waveform_noise: f64,
    pub interpolation: Interpolation,
    pub excitation: Excitation,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SourceDomain::default();
        SimulationSection {
            n: 24_000,
            seed: 7,
            mode: SimMode::Event,
            toa_noise_sigma: 0.0,
            domain_radius: d.radius,
            exclusion_radius: d.exclusion_radius,
            waveform_noise: 0.0,
            interpolation: Interpolation::Parabolic,
            excitation: Excitation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocateSection {
    pub radius_bound: f64,
    pub interpolation: Interpolation,
    pub max_lag: Option<usize>,
}

impl Default for LocateSection {
    fn default() -> Self {
        LocateSection {
            radius_bound: DEFAULT_RADIUS_BOUND,
            interpolation: Interpolation::Parabolic,
            max_lag: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffsetsSection {
    pub n: usize,
    pub levels: Vec<f64>,
}

impl Default for OffsetsSection {
    fn default() -> Self {
        OffsetsSection {
            n: 10_000,
            levels: DEFAULT_OFFSET_LEVELS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub array: ArraySection,
    pub medium: MediumSection,
    pub sampling: SamplingSection,
    pub simulation: SimulationSection,
    pub split: SplitSection,
    pub forest: ForestParams,
    pub mlp: MlpParams,
    pub locate: LocateSection,
    pub offsets: OffsetsSection,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like section.key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut cur = table;
    for seg in &path[..path.len() - 1] {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{seg}` is not a section")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// `section.key` for the line a deserialisation error points at.
fn field_at(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = text[before.rfind('\n').map_or(0, |i| i + 1)..]
        .lines()
        .next()
        .unwrap_or("");
    let key = line.split('=').next().unwrap_or("").trim();
    let section = before
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix('[').and_then(|l| l.strip_suffix(']')))
        .unwrap_or("");
    match (section.is_empty(), key.starts_with('[')) {
        (_, true) => key.trim_matches(|c| c == '[' || c == ']').to_string(),
        (true, _) => key.to_string(),
        (false, _) => format!("{section}.{key}"),
    }
}

impl RunConfig {
    /// Parses `text` (the contents of `source`) and applies `overrides`.
    pub fn from_toml(text: &str, source: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
            path: source.into(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1),
            message: e.message().to_string(),
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let merged = toml::to_string(&table).map_err(|e| Error::config("<config>", e.to_string()))?;
        let cfg: RunConfig = toml::from_str(&merged).map_err(|e| {
            let field = e.span().map_or_else(|| "<config>".to_string(), |s| field_at(&merged, s.start));
            Error::config(field, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
                Self::from_toml(&text, &p.display().to_string(), overrides)
            }
            None => Self::from_toml("", "<defaults>", overrides),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn medium(&self) -> Result<Medium> {
        match (self.medium.speed_of_sound, self.medium.temperature_c) {
            (Some(_), Some(_)) => Err(Error::config(
                "medium",
                "set either speed_of_sound or temperature_c, not both",
            )),
            (Some(c), None) => Medium::new(c).map_err(|e| Error::config("medium.speed_of_sound", e.to_string())),
            (None, Some(t)) => {
                Medium::from_temperature(t).map_err(|e| Error::config("medium.temperature_c", e.to_string()))
            }
            (None, None) => Ok(Medium::default()),
        }
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::equilateral(self.array.spacing).map_err(|e| Error::config("array.spacing", e.to_string()))
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.simulation;
        let sampling = SamplingSpec::with_offsets(self.sampling.rate, self.sampling.phase_offsets)
            .map_err(|e| Error::config("sampling", e.to_string()))?;
        let domain = SourceDomain::new(s.domain_radius, s.exclusion_radius)
            .map_err(|e| Error::config("simulation.domain_radius", e.to_string()))?;
        let cfg = SimConfig {
            geometry: self.geometry()?,
            medium: self.medium()?,
            sampling,
            placement_tolerance: self.array.placement_tolerance,
            toa_noise_sigma: s.toa_noise_sigma,
            mode: s.mode,
            waveform: WaveformParams {
                excitation: s.excitation,
                noise_relative: s.waveform_noise,
                interpolation: s.interpolation,
            },
            domain,
            master_seed: s.seed,
        };
        cfg.validate().map_err(|e| Error::config("simulation", e.to_string()))?;
        Ok(cfg)
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            radius_bound: self.locate.radius_bound,
            interpolation: self.locate.interpolation,
            max_lag: self.locate.max_lag,
        }
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be a finite value > 0, got {v}")))
            }
        };
        positive("array.spacing", self.array.spacing)?;
        if !(self.array.placement_tolerance >= 0.0 && self.array.placement_tolerance.is_finite()) {
            return Err(Error::config("array.placement_tolerance", "must be >= 0"));
        }
        positive("sampling.rate", self.sampling.rate)?;
        if self.simulation.n == 0 {
            return Err(Error::config("simulation.n", "must be >= 1"));
        }
        if !(self.simulation.toa_noise_sigma >= 0.0 && self.simulation.toa_noise_sigma.is_finite()) {
            return Err(Error::config("simulation.toa_noise_sigma", "must be >= 0"));
        }
        if !(self.simulation.waveform_noise >= 0.0 && self.simulation.waveform_noise.is_finite()) {
            return Err(Error::config("simulation.waveform_noise", "must be >= 0"));
        }
        positive("simulation.excitation.duration_s", self.simulation.excitation.duration())?;
        self.sim_config()?;
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config("split.train_fraction", format!("must be in (0, 1), got {f}")));
        }
        let prefixed = |section: &str, e: Error| match e {
            Error::Config { field, message } => Error::config(format!("{section}.{field}"), message),
            other => other,
        };
        self.forest.validate().map_err(|e| prefixed("forest", e))?;
        self.mlp.validate().map_err(|e| prefixed("mlp", e))?;
        if !(self.locate.radius_bound > 1.0 && self.locate.radius_bound.is_finite()) {
            return Err(Error::config("locate.radius_bound", "must be a finite value > 1 m"));
        }
        if self.locate.max_lag == Some(0) {
            return Err(Error::config("locate.max_lag", "must be >= 1"));
        }
        if self.offsets.n == 0 {
            return Err(Error::config("offsets.n", "must be >= 1"));
        }
        if self.offsets.levels.is_empty() || self.offsets.levels.iter().any(|l| !(0.0..1.0).contains(l)) {
            return Err(Error::config("offsets.levels", "must be a non-empty list of values in [0, 1)"));
        }
        Ok(())
    }
}
