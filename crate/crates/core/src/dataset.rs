//! Labeled samples, feature standardisation, train/validation split and the
//! CSV interchange file.
//!
//! File layout (one header line, then one row per sample):
//!
//! ```text
//! index,tau21_s,tau31_s,ratio,azimuth_deg,bin12,bin24,x_m,y_m
//! ```
//!
//! Floats are written in `{:.16e}` form (17 significant digits), which
//! round-trips every finite `f64` exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::seeding::{rng_for, Stream};
use crate::simulate::{Observation, TdoaPair};

pub const CSV_HEADER: &str = "index,tau21_s,tau31_s,ratio,azimuth_deg,bin12,bin24,x_m,y_m";
pub const N_FEATURES: usize = 3;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// Nearest of `n_bins` equally spaced angles, modulo `n_bins`.
pub fn azimuth_bin(azimuth_deg: f64, n_bins: usize) -> usize {
    let width = 360.0 / n_bins as f64;
    ((azimuth_deg / width).round() as i64).rem_euclid(n_bins as i64) as usize
}

pub fn bin_center_deg(bin: usize, n_bins: usize) -> f64 {
    bin as f64 * 360.0 / n_bins as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: TdoaPair,
    /// True source azimuth from the reference microphone.
    pub azimuth_deg: f64,
    pub bin12: usize,
    pub bin24: usize,
    pub source_x: f64,
    pub source_y: f64,
    pub sample_index: u64,
}

impl LabeledSample {
    pub fn new(features: TdoaPair, azimuth_deg: f64, source_x: f64, source_y: f64, sample_index: u64) -> Self {
        LabeledSample {
            features,
            azimuth_deg,
            bin12: azimuth_bin(azimuth_deg, 12),
            bin24: azimuth_bin(azimuth_deg, 24),
            source_x,
            source_y,
            sample_index,
        }
    }

    pub fn bin(&self, n_bins: usize) -> usize {
        match n_bins {
            12 => self.bin12,
            24 => self.bin24,
            n => azimuth_bin(self.azimuth_deg, n),
        }
    }
}

pub fn to_labeled(obs: &Observation, geometry: &ArrayGeometry) -> LabeledSample {
    LabeledSample::new(
        obs.estimated,
        obs.source.azimuth(geometry),
        obs.source.x,
        obs.source.y,
        obs.sample_index,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: [f64; N_FEATURES],
    /// Population standard deviation; 0 marks a constant feature.
    pub std: [f64; N_FEATURES],
}

impl FeatureScaler {
    pub fn fit(rows: &[[f64; N_FEATURES]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::domain("cannot fit a scaler on an empty training set"));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        let mut std = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            let m = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / n;
            mean[k] = m;
            // Relative guard against rounding noise on a constant column
            std[k] = if var.sqrt() > 1e-12 * m.abs() { var.sqrt() } else { 0.0 };
        }
        Ok(FeatureScaler { mean, std })
    }

    pub fn fit_samples(train: &[LabeledSample]) -> Result<Self> {
        let rows: Vec<_> = train.iter().map(|s| s.features.features()).collect();
        Self::fit(&rows)
    }

    pub fn transform(&self, x: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        std::array::from_fn(|k| {
            if self.std[k] > 0.0 {
                (x[k] - self.mean[k]) / self.std[k]
            } else {
                0.0
            }
        })
    }

    /// Constant features come back as their mean.
    pub fn inverse(&self, z: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        std::array::from_fn(|k| z[k] * self.std[k] + self.mean[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub split_seed: u64,
}

/// Seeded shuffle, then the first `round(fraction·N)` rows become training data.
pub fn split(samples: &[LabeledSample], fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng_for(seed, 0, Stream::Split));
    let cut = (fraction * samples.len() as f64).round() as usize;
    let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i]).collect::<Vec<_>>();
    Ok(SplitDataset {
        train: pick(&order[..cut]),
        validation: pick(&order[cut..]),
        split_seed: seed,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(samples: &[LabeledSample], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let wrap = |e: csv::Error| Error::io("writing dataset", e.into());
    w.write_record(CSV_HEADER.split(',')).map_err(wrap)?;
    for s in samples {
        w.write_record([
            s.sample_index.to_string(),
            fmt_f64(s.features.tau21),
            fmt_f64(s.features.tau31),
            fmt_f64(s.features.ratio),
            fmt_f64(s.azimuth_deg),
            s.bin12.to_string(),
            s.bin24.to_string(),
            fmt_f64(s.source_x),
            fmt_f64(s.source_y),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("writing dataset", e))
}

pub fn save(samples: &[LabeledSample], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_csv(samples, BufWriter::new(f))
}

pub fn read_csv<R: BufRead>(input: R, source: &str) -> Result<Vec<LabeledSample>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.into(),
        line,
        message,
    };
    let mut rows = Vec::new();
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == CSV_HEADER => {}
        Some(Ok(h)) => return Err(parse_err(1, format!("unexpected header {h:?}"))),
        Some(Err(e)) => return Err(parse_err(1, e.to_string())),
        None => return Err(parse_err(1, "missing header".into())),
    }
    for (i, line) in lines.enumerate() {
        let lineno = i as u64 + 2;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(parse_err(lineno, format!("expected 9 columns, found {}", cols.len())));
        }
        let f = |k: usize| -> Result<f64> {
            cols[k]
                .parse::<f64>()
                .map_err(|e| parse_err(lineno, format!("column {}: {e}", k + 1)))
        };
        let u = |k: usize| -> Result<u64> {
            cols[k]
                .parse::<u64>()
                .map_err(|e| parse_err(lineno, format!("column {}: {e}", k + 1)))
        };
        let (bin12, bin24) = (u(5)? as usize, u(6)? as usize);
        if bin12 >= 12 || bin24 >= 24 {
            return Err(parse_err(lineno, "bin label out of range".into()));
        }
        rows.push(LabeledSample {
            features: TdoaPair {
                tau21: f(1)?,
                tau31: f(2)?,
                ratio: f(3)?,
            },
            azimuth_deg: f(4)?,
            bin12,
            bin24,
            source_x: f(7)?,
            source_y: f(8)?,
            sample_index: u(0)?,
        });
    }
    Ok(rows)
}

pub fn load(path: &Path) -> Result<Vec<LabeledSample>> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_csv(BufReader::new(f), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point2, SourcePosition};
    use proptest::prelude::*;

    fn sample(i: u64, az: f64) -> LabeledSample {
        LabeledSample::new(TdoaPair::new(1e-4 * i as f64, -2e-5), az, 1.5, -0.25, i)
    }

    #[test]
    fn bin_labels() {
        assert_eq!(azimuth_bin(0.0, 12), 0);
        assert_eq!(azimuth_bin(47.0, 12), 2);
        assert_eq!(azimuth_bin(359.9, 12), 0);
        assert_eq!(azimuth_bin(345.0, 12), 0);
        assert_eq!(azimuth_bin(344.9, 12), 11);
        assert_eq!(azimuth_bin(47.0, 24), 3);
        assert_eq!(bin_center_deg(3, 12), 90.0);
    }

    #[test]
    fn labeled_from_observation() {
        let g = ArrayGeometry::equilateral(0.1).unwrap();
        let src = SourcePosition::from_polar(Point2::new(0.0, 0.0), 10.0, 0.0);
        let obs = Observation {
            estimated: TdoaPair::new(0.0, 0.0),
            true_tdoa: TdoaPair::new(0.0, 0.0),
            source: src,
            sample_index: 4,
        };
        let s = to_labeled(&obs, &g);
        assert!(s.azimuth_deg.abs() < 1e-12 || (s.azimuth_deg - 360.0).abs() < 1e-12);
        assert_eq!(s.bin12, 0);
        assert_eq!(s.sample_index, 4);
    }

    #[test]
    fn scaler_hand_example() {
        let s = FeatureScaler::fit(&[[1.0, 5.0, 0.0], [3.0, 5.0, 2.0]]).unwrap();
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.std[1], 0.0);
        assert_eq!(s.transform(&[1.0, 5.0, 0.0])[..2], [-1.0, 0.0]);
        assert_eq!(s.transform(&[3.0, 7.0, 0.0])[..2], [1.0, 0.0]);
        assert!(FeatureScaler::fit(&[]).is_err());
    }

    #[test]
    fn split_counts() {
        let v: Vec<_> = (0..24_000).map(|i| sample(i, 10.0)).collect();
        let s = split(&v, 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (19_200, 4_800));
        let v: Vec<_> = (0..10).map(|i| sample(i, 10.0)).collect();
        let a = split(&v, 0.8, 1).unwrap();
        assert_eq!((a.train.len(), a.validation.len()), (8, 2));
        assert_eq!(a, split(&v, 0.8, 1).unwrap());
        assert!(split(&v, 1.0, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let v: Vec<_> = (0..50)
            .map(|i| {
                let mut s = sample(i, (i as f64 * 7.3) % 360.0);
                s.features = TdoaPair::new(1.0 / 3.0 * 1e-4 * i as f64, f64::MIN_POSITIVE);
                s.source_x = std::f64::consts::PI * i as f64;
                s
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&v, &mut buf).unwrap();
        let back = read_csv(&buf[..], "mem").unwrap();
        assert_eq!(v.len(), back.len());
        for (a, b) in v.iter().zip(&back) {
            assert_eq!(a.features.tau21.to_bits(), b.features.tau21.to_bits());
            assert_eq!(a.features.ratio.to_bits(), b.features.ratio.to_bits());
            assert_eq!(a.source_x.to_bits(), b.source_x.to_bits());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_file_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), format!("{CSV_HEADER}\n"));
        assert!(read_csv(&buf[..], "mem").unwrap().is_empty());
    }

    #[test]
    fn bad_row_names_line() {
        let text = format!("{CSV_HEADER}\n0,1,2,3,4,0,0,1,1\n1,1,2,3\n");
        match read_csv(text.as_bytes(), "x.csv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_csv("nope\n".as_bytes(), "x"), Err(Error::Parse { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn bins_are_total(az in 0.0f64..360.0) {
            prop_assert!(azimuth_bin(az, 12) < 12);
            prop_assert!(azimuth_bin(az, 24) < 24);
            let c = bin_center_deg(azimuth_bin(az, 12), 12);
            prop_assert!(crate::geometry::angular_distance_deg(az, c) <= 15.0 + 1e-9);
        }

        #[test]
        fn scaler_standardises(col in prop::collection::vec(-1e3f64..1e3, 2..64)) {
            let rows: Vec<[f64; 3]> = col.iter().map(|&v| [v, v * 1e-4, 2.0]).collect();
            let s = FeatureScaler::fit(&rows).unwrap();
            let z: Vec<_> = rows.iter().map(|r| s.transform(r)).collect();
            for k in 0..2 {
                if s.std[k] == 0.0 { continue; }
                let n = z.len() as f64;
                let m = z.iter().map(|r| r[k]).sum::<f64>() / n;
                let sd = (z.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
                for (r, zr) in rows.iter().zip(&z) {
                    prop_assert!((s.inverse(zr)[k] - r[k]).abs() <= 1e-9 * (1.0 + r[k].abs()));
                }
            }
            prop_assert!(z.iter().all(|r| r[2] == 0.0));
            // monotone
            for i in 0..rows.len() {
                for j in 0..rows.len() {
                    if rows[i][0] < rows[j][0] { prop_assert!(z[i][0] < z[j][0]); }
                }
            }
        }

        #[test]
        fn split_is_partition(n in 0usize..200, seed in any::<u64>()) {
            let v: Vec<_> = (0..n as u64).map(|i| sample(i, 1.0)).collect();
            let s = split(&v, 0.8, seed).unwrap();
            let mut ids: Vec<u64> = s.train.iter().chain(&s.validation).map(|x| x.sample_index).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..n as u64).collect::<Vec<_>>());
            prop_assert_eq!(s.train.len(), (0.8 * n as f64).round() as usize);
        }
    }
}
