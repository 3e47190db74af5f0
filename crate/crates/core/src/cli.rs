//! `micloc` command line.
//!
//! Every subcommand reads the same [`RunConfig`]; dedicated flags such as
//! `--n` or `--fs` are shorthands for `--set` overrides and win over both the
//! file and earlier `--set` entries. Outputs depend only on the configuration
//! and inputs, never on thread count or scheduling.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::audio::{self, SampleFormat};
use crate::config::{RunConfig, CONFIG_HELP};
use crate::dataset::{self, LabeledSample};
use crate::dsp::{self, Waveform};
use crate::error::{Error, Result};
use crate::geometry::{true_toa, SourcePosition};
use crate::locate::{localize_pipeline, PipelineEstimate, PipelineInput};
use crate::models::{train_mlp, train_rf, TrainedModel};
use crate::report;
use crate::simulate::{render_channels, run_batch, run_offset_experiment};
use crate::stats::offset_anova;

#[derive(Debug, Parser)]
#[command(name = "micloc", version, about = "Three-microphone sound-source localization experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set sampling.rate=48000`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a labeled dataset and write it as CSV.
    #[command(after_help = CONFIG_HELP)]
    Simulate(SimulateArgs),
    /// Train a model on the training split of a dataset.
    #[command(after_help = CONFIG_HELP)]
    Train(TrainArgs),
    /// Compare a model against geometric multilateration on a dataset.
    #[command(after_help = CONFIG_HELP)]
    Eval(EvalArgs),
    /// Localize one recording, TDOA pair or dataset row.
    #[command(after_help = CONFIG_HELP)]
    Locate(LocateArgs),
    /// Sampling-offset experiment: raw table plus two one-way ANOVAs.
    #[command(after_help = CONFIG_HELP)]
    Offsets(OffsetsArgs),
    /// Render the array recording of a source at a known position.
    #[command(after_help = CONFIG_HELP)]
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Shorthand for `--set simulation.n=N`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Shorthand for `--set simulation.seed=S`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shorthand for `--set sampling.rate=HZ`.
    #[arg(long, value_name = "HZ")]
    pub fs: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Dataset CSV to write.
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Rf,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Validation,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV produced by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub kind: ModelKind,
    /// Model file to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Rows to train on (split per `split.*`).
    #[arg(long, value_enum, default_value = "train")]
    pub on: Subset,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Rows to evaluate on (split per `split.*`).
    #[arg(long, value_enum, default_value = "validation")]
    pub on: Subset,
    /// Key-value report to write.
    #[arg(long)]
    pub report: PathBuf,
    /// Absolute-error histogram CSV (model and baseline counts).
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    /// Absolute-error CDF CSV (model and baseline).
    #[arg(long)]
    pub cdf: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocateArgs {
    /// One 3-channel WAV, or three mono WAVs in microphone order (channels
    /// are assumed sample-synchronous).
    #[arg(long, num_args = 1..=3, value_name = "WAV", group = "input")]
    pub wav: Vec<PathBuf>,
    /// Dataset CSV; use with `--row`.
    #[arg(long, group = "input", requires = "row")]
    pub data: Option<PathBuf>,
    /// Zero-based data row.
    #[arg(long)]
    pub row: Option<usize>,
    /// Delays `tau21,tau31` in seconds.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, group = "input", value_name = "T21,T31")]
    pub tdoa: Vec<f64>,
    /// Model whose azimuth replaces the geometric one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Resample audio to this rate before delay estimation.
    #[arg(long, value_name = "HZ")]
    pub resample: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OffsetsArgs {
    /// Per-trial table CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Key-value ANOVA report.
    #[arg(long)]
    pub anova: PathBuf,
    /// Shorthand for `--set offsets.n=N`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Shorthand for `--set simulation.seed=S`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shorthand for `--set sampling.rate=HZ`.
    #[arg(long, value_name = "HZ")]
    pub fs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WavFormat {
    Int16,
    Float32,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// One 3-channel file, or three paths for one mono file per microphone.
    #[arg(long, short, num_args = 1..=3, required = true)]
    pub out: Vec<PathBuf>,
    /// Source x in metres (array frame, microphone 0 at the origin).
    #[arg(long, allow_negative_numbers = true)]
    pub x: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub y: f64,
    #[arg(long, value_enum, default_value = "float32")]
    pub format: WavFormat,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shorthand for `--set sampling.rate=HZ`.
    #[arg(long, value_name = "HZ")]
    pub fs: Option<f64>,
}

fn overrides(global: &GlobalArgs, extra: Vec<(&str, Option<String>)>) -> Vec<String> {
    let mut v = global.set.clone();
    v.extend(extra.into_iter().filter_map(|(k, val)| val.map(|x| format!("{k}={x}"))));
    v
}

fn sim_overrides(s: &SimArgs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("simulation.n", s.n.map(|v| v.to_string())),
        ("simulation.seed", s.seed.map(|v| v.to_string())),
        ("sampling.rate", s.fs.map(|v| format!("{v:?}"))),
    ]
}

fn require_input(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::config("input", format!("{} does not exist or is not a file", p.display())))
    }
}

fn require_output(p: &Path) -> Result<()> {
    let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Error::config("output", format!("directory {} does not exist", parent.display())))
    }
}

fn write_file(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))
}

fn select(samples: &[LabeledSample], cfg: &RunConfig, on: Subset) -> Result<Vec<LabeledSample>> {
    if on == Subset::All {
        return Ok(samples.to_vec());
    }
    let s = dataset::split(samples, cfg.split.train_fraction, cfg.split.seed)?;
    let rows = if on == Subset::Train { s.train } else { s.validation };
    if rows.is_empty() {
        return Err(Error::domain("selected subset is empty"));
    }
    Ok(rows)
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(Error::config("--threads", "must be >= 1"));
        }
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    if let Some(p) = &cli.global.config {
        require_input(p)?;
    }
    let g = &cli.global;
    let load = |extra| RunConfig::load(g.config.as_deref(), &overrides(g, extra));
    let text = match &cli.command {
        Command::Simulate(a) => {
            require_output(&a.out)?;
            cmd_simulate(&load(sim_overrides(&a.sim))?, &a.out)?
        }
        Command::Train(a) => {
            require_input(&a.data)?;
            require_output(&a.out)?;
            cmd_train(&load(vec![])?, a)?
        }
        Command::Eval(a) => {
            require_input(&a.model)?;
            require_input(&a.data)?;
            for p in [Some(&a.report), a.histogram.as_ref(), a.cdf.as_ref()].into_iter().flatten() {
                require_output(p)?;
            }
            cmd_eval(&load(vec![])?, a)?
        }
        Command::Locate(a) => {
            for p in a.wav.iter().chain(&a.data).chain(&a.model) {
                require_input(p)?;
            }
            cmd_locate(&load(vec![])?, a)?
        }
        Command::Offsets(a) => {
            require_output(&a.out)?;
            require_output(&a.anova)?;
            cmd_offsets(
                &load(sim_overrides(&SimArgs {
                    n: None,
                    seed: a.seed,
                    fs: a.fs,
                })
                .into_iter()
                .chain([("offsets.n", a.n.map(|v| v.to_string()))])
                .collect())?,
                a,
            )?
        }
        Command::Synth(a) => {
            if a.out.len() == 2 {
                return Err(Error::config("--out", "give one 3-channel path or three mono paths"));
            }
            for p in &a.out {
                require_output(p)?;
            }
            cmd_synth(&load(vec![("sampling.rate", a.fs.map(|v| format!("{v:?}")))])?, a)?
        }
    };
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("writing to stdout", e))
}

pub fn cmd_simulate(cfg: &RunConfig, path: &Path) -> Result<String> {
    let sim = cfg.sim_config()?;
    let obs = run_batch(&sim, cfg.simulation.n)?;
    let samples: Vec<LabeledSample> = obs.iter().map(|o| dataset::to_labeled(o, &sim.geometry)).collect();
    dataset::save(&samples, path)?;
    Ok(format!(
        "rows = {}\nseed = {}\nspacing_m = {}\nspeed_of_sound_mps = {}\nsample_rate_hz = {}\nmode = {}\nout = {}\n",
        samples.len(),
        sim.master_seed,
        cfg.array.spacing,
        sim.medium.speed_of_sound(),
        sim.sampling.sample_rate(),
        match sim.mode {
            crate::simulate::SimMode::Event => "event",
            crate::simulate::SimMode::Waveform => "waveform",
        },
        path.display()
    ))
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs) -> Result<String> {
    let all = dataset::load(&a.data)?;
    let rows = select(&all, cfg, a.on)?;
    let model = match a.kind {
        ModelKind::Rf => train_rf(&rows, &cfg.forest)?,
        ModelKind::Mlp => train_mlp(&rows, &cfg.mlp)?,
    };
    model.save(&a.out)?;
    let mut s = format!(
        "model.kind = {}\nmodel.fingerprint = {}\ntrain.rows = {}\ntrain.dataset_fingerprint = {}\nout = {}\n",
        model.kind(),
        model.fingerprint(),
        rows.len(),
        model.meta.dataset_fingerprint,
        a.out.display()
    );
    if let crate::models::Learner::Mlp(net) = &model.learner {
        if let Some(l) = net.loss_history.last() {
            let _ = writeln!(s, "train.final_loss = {l}");
        }
    }
    if model.meta.degenerate {
        s.push_str("warning = only one azimuth class in the training data\n");
    }
    Ok(s)
}

fn cmd_eval(cfg: &RunConfig, a: &EvalArgs) -> Result<String> {
    let model = TrainedModel::load(&a.model)?;
    let all = dataset::load(&a.data)?;
    let rows = select(&all, cfg, a.on)?;
    let r = report::evaluate(&model, &rows, &cfg.geometry()?, &cfg.medium()?, cfg.locate.radius_bound)?;
    let summary = r.summary();
    write_file(&a.report, &summary)?;
    if let Some(p) = &a.histogram {
        write_file(p, &r.histogram_csv())?;
    }
    if let Some(p) = &a.cdf {
        write_file(p, &r.cdf_csv())?;
    }
    Ok(summary)
}

fn format_estimate(e: &PipelineEstimate) -> String {
    let l = &e.location;
    format!(
        "azimuth_deg = {}\ngeometric_azimuth_deg = {}\nposition_m = {}, {}\nresidual = {:e}\nconverged = {}\nrange_unreliable = {}\nmodel_applied = {}\ntau21_s = {:e}\ntau31_s = {:e}\n",
        e.azimuth_deg,
        l.azimuth_deg,
        l.position.x,
        l.position.y,
        l.residual,
        l.converged,
        l.range_unreliable,
        e.model_applied,
        e.tdoa.tau21,
        e.tdoa.tau31
    )
}

fn cmd_locate(cfg: &RunConfig, a: &LocateArgs) -> Result<String> {
    let geometry = cfg.geometry()?;
    let medium = cfg.medium()?;
    let model = a.model.as_deref().map(TrainedModel::load).transpose()?;
    let opts = cfg.pipeline_options();
    let mut extra = String::new();
    let est = if !a.wav.is_empty() {
        if a.wav.len() == 2 {
            return Err(Error::Audio("need one 3-channel file or three mono files, got 2 paths".into()));
        }
        let input = audio::read_array_audio(&a.wav)?;
        let channels: Vec<Waveform> = match a.resample {
            Some(fs) => input.channels.iter().map(|c| dsp::resample(c, fs)).collect::<Result<_>>()?,
            None => input.channels.to_vec(),
        };
        let _ = writeln!(extra, "sample_rate_hz = {}", channels[0].sample_rate());
        localize_pipeline(&geometry, &medium, PipelineInput::Waveforms(&channels), model.as_ref(), &opts)?
    } else if let Some(path) = &a.data {
        let row = a.row.expect("clap enforces --row");
        let rows = dataset::load(path)?;
        let s = rows
            .get(row)
            .ok_or_else(|| Error::domain(format!("row {row} out of range (dataset has {} rows)", rows.len())))?;
        let _ = writeln!(extra, "true_azimuth_deg = {}", s.azimuth_deg);
        localize_pipeline(&geometry, &medium, PipelineInput::Tdoa(s.features), model.as_ref(), &opts)?
    } else if !a.tdoa.is_empty() {
        if a.tdoa.len() != 2 {
            return Err(Error::config("--tdoa", format!("need exactly 2 values, got {}", a.tdoa.len())));
        }
        let t = crate::simulate::TdoaPair::new(a.tdoa[0], a.tdoa[1]);
        localize_pipeline(&geometry, &medium, PipelineInput::Tdoa(t), model.as_ref(), &opts)?
    } else {
        return Err(Error::config("input", "give --wav, --data with --row, or --tdoa"));
    };
    Ok(format_estimate(&est) + &extra)
}

fn cmd_offsets(cfg: &RunConfig, a: &OffsetsArgs) -> Result<String> {
    let sim = cfg.sim_config()?;
    let trials = run_offset_experiment(&sim, cfg.offsets.n, &cfg.offsets.levels, cfg.locate.radius_bound)?;
    let mut table = String::from("index,offset2_level,offset3_level,position_error_m\n");
    for t in &trials {
        let _ = writeln!(
            table,
            "{},{},{},{:.16e}",
            t.index, t.offset2_level, t.offset3_level, t.position_error_m
        );
    }
    write_file(&a.out, &table)?;
    let (a2, a3) = offset_anova(&trials)?;
    let mut s = format!("trials = {}\nseed = {}\nsample_rate_hz = {}\n", trials.len(), sim.master_seed, sim.sampling.sample_rate());
    s += &a2.to_key_value("offset2");
    s += &a3.to_key_value("offset3");
    write_file(&a.anova, &s)?;
    Ok(s)
}

fn cmd_synth(cfg: &RunConfig, a: &SynthArgs) -> Result<String> {
    let sim = cfg.sim_config()?;
    let src = SourcePosition::new(a.x, a.y);
    let toa = true_toa(&sim.geometry, &sim.medium, src)?;
    let ch = render_channels(&sim.waveform.excitation, &sim.sampling, toa, sim.waveform.noise_relative, a.seed)?;
    let fmt = match a.format {
        WavFormat::Int16 => SampleFormat::Int16,
        WavFormat::Float32 => SampleFormat::Float32,
    };
    if a.out.len() == 3 {
        for (p, c) in a.out.iter().zip(&ch) {
            audio::write_wav(p, std::slice::from_ref(c), fmt)?;
        }
    } else {
        audio::write_wav(&a.out[0], &ch, fmt)?;
    }
    Ok(format!(
        "true_azimuth_deg = {}\nsource_m = {}, {}\ntrue_tau21_s = {:e}\ntrue_tau31_s = {:e}\nsample_rate_hz = {}\nsamples = {}\n",
        src.azimuth(&sim.geometry),
        a.x,
        a.y,
        toa[1] - toa[0],
        toa[2] - toa[0],
        sim.sampling.sample_rate(),
        ch[0].len()
    ))
}
