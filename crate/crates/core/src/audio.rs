//! RIFF WAVE input and output for the three array channels.
//!
//! Channels are interpreted as microphones 0, 1, 2 in geometry order. When
//! three mono files are given instead of one three-channel file, they are
//! assumed to be sample-synchronous from their first frame; the longer files
//! are truncated to the shortest.

use std::path::{Path, PathBuf};

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Int16,
    Float32,
}

/// Three synchronised channels read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioInput {
    pub channels: [Waveform; 3],
    pub sample_rate: u32,
    pub bits_per_sample: u16,
}

fn audio_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Audio(format!("{}: {msg}", path.display()))
}

/// Every channel of a WAV file as floats in `[-1, 1]`.
pub fn read_wav(path: &Path) -> Result<(Vec<Waveform>, WavSpec)> {
    let reader = WavReader::open(path).map_err(|e| audio_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate == 0 || spec.channels == 0 {
        return Err(audio_err(path, "zero sample rate or channel count"));
    }
    let nch = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(path, e))?,
        (HoundFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(path, e))?,
        (fmt, bits) => {
            return Err(audio_err(
                path,
                format!("unsupported sample format {fmt:?} {bits}-bit (need 16-bit PCM or 32-bit float)"),
            ))
        }
    };
    let frames = interleaved.len() / nch;
    if frames == 0 {
        return Err(audio_err(path, "file contains no samples"));
    }
    let fs = f64::from(spec.sample_rate);
    let channels = (0..nch)
        .map(|c| Waveform::new((0..frames).map(|f| interleaved[f * nch + c]).collect(), fs))
        .collect::<Result<Vec<_>>>()?;
    Ok((channels, spec))
}

/// One three-channel file, or three mono files in microphone order.
pub fn read_array_audio(paths: &[PathBuf]) -> Result<AudioInput> {
    match paths {
        [one] => {
            let (ch, spec) = read_wav(one)?;
            if ch.len() != 3 {
                return Err(audio_err(one, format!("expected 3 channels, found {}", ch.len())));
            }
            Ok(AudioInput {
                channels: ch.try_into().expect("three channels"),
                sample_rate: spec.sample_rate,
                bits_per_sample: spec.bits_per_sample,
            })
        }
        [_, _, _] => {
            let mut chans = Vec::with_capacity(3);
            let mut first: Option<WavSpec> = None;
            for p in paths {
                let (mut ch, spec) = read_wav(p)?;
                if ch.len() != 1 {
                    return Err(audio_err(p, format!("expected a mono file, found {} channels", ch.len())));
                }
                if let Some(f) = first {
                    if f.sample_rate != spec.sample_rate {
                        return Err(audio_err(
                            p,
                            format!("sample rate {} differs from {}", spec.sample_rate, f.sample_rate),
                        ));
                    }
                }
                first.get_or_insert(spec);
                chans.push(ch.remove(0));
            }
            let n = chans.iter().map(Waveform::len).min().unwrap_or(0);
            let spec = first.expect("three files");
            let channels = chans
                .into_iter()
                .map(|w| {
                    let fs = w.sample_rate();
                    let mut s = w.into_samples();
                    s.truncate(n);
                    Waveform::new(s, fs)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AudioInput {
                channels: channels.try_into().expect("three channels"),
                sample_rate: spec.sample_rate,
                bits_per_sample: spec.bits_per_sample,
            })
        }
        _ => Err(Error::Audio(format!(
            "need one 3-channel file or three mono files, got {} paths",
            paths.len()
        ))),
    }
}

/// Writes equal-length channels as one interleaved file. Samples are clipped
/// to `[-1, 1]` for the integer format.
pub fn write_wav(path: &Path, channels: &[Waveform], format: SampleFormat) -> Result<()> {
    let first = channels.first().ok_or_else(|| Error::Audio("no channels to write".into()))?;
    if channels.iter().any(|c| c.len() != first.len() || c.sample_rate() != first.sample_rate()) {
        return Err(Error::Audio("channels differ in length or sample rate".into()));
    }
    let fs = first.sample_rate();
    if fs.fract() != 0.0 || fs > f64::from(u32::MAX) {
        return Err(Error::Audio(format!("sample rate {fs} is not a whole number of hertz")));
    }
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate: fs as u32,
        bits_per_sample: match format {
            SampleFormat::Int16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Int16 => HoundFormat::Int,
            SampleFormat::Float32 => HoundFormat::Float,
        },
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| audio_err(path, e))?;
    for f in 0..first.len() {
        for c in channels {
            let v = c.samples()[f];
            let r = match format {
                SampleFormat::Int16 => w.write_sample((v.clamp(-1.0, 1.0) * 32767.0).round() as i16),
                SampleFormat::Float32 => w.write_sample(v as f32),
            };
            r.map_err(|e| audio_err(path, e))?;
        }
    }
    w.finalize().map_err(|e| audio_err(path, e))
}
