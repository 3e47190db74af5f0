//! Model-versus-baseline evaluation on a labeled set.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSample;
use crate::error::{Error, Result};
use crate::geometry::{angular_distance_deg, ArrayGeometry, Medium};
use crate::locate::{multilaterate, MultilaterationProblem};
use crate::models::{circular_mae, Learner, TrainedModel};
use crate::stats::{cdf, histogram_from, DistributionTable};

pub const HISTOGRAM_WIDTH_DEG: f64 = 5.0;

/// Geometric azimuth estimate for every sample, in input order.
pub fn baseline_azimuths(
    samples: &[LabeledSample],
    geometry: &ArrayGeometry,
    medium: &Medium,
    radius_bound: f64,
) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            let p = MultilaterationProblem::new(*geometry, *medium, s.features, radius_bound)?;
            Ok(multilaterate(&p)?.azimuth_deg)
        })
        .collect()
}

pub fn model_azimuths(model: &TrainedModel, samples: &[LabeledSample]) -> Result<Vec<f64>> {
    samples.par_iter().map(|s| model.predict_azimuth(&s.features)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAccuracy {
    pub bin: usize,
    pub count: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: String,
    pub model_fingerprint: String,
    pub n: usize,
    pub model_mae_deg: f64,
    pub baseline_mae_deg: f64,
    /// Forest models only.
    pub per_bin: Option<Vec<BinAccuracy>>,
    pub model_histogram: DistributionTable,
    pub baseline_histogram: DistributionTable,
    pub model_cdf: DistributionTable,
    pub baseline_cdf: DistributionTable,
}

pub fn evaluate(
    model: &TrainedModel,
    samples: &[LabeledSample],
    geometry: &ArrayGeometry,
    medium: &Medium,
    radius_bound: f64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::domain("evaluation set is empty"));
    }
    let truth: Vec<f64> = samples.iter().map(|s| s.azimuth_deg).collect();
    let predicted = model_azimuths(model, samples)?;
    let baseline = baseline_azimuths(samples, geometry, medium, radius_bound)?;
    let err = |p: &[f64]| -> Vec<f64> { p.iter().zip(&truth).map(|(a, b)| angular_distance_deg(*a, *b)).collect() };
    let (model_err, base_err) = (err(&predicted), err(&baseline));

    let per_bin = match &model.learner {
        Learner::Forest(f) => {
            let mut acc: Vec<BinAccuracy> = (0..f.n_classes)
                .map(|bin| BinAccuracy {
                    bin,
                    count: 0,
                    correct: 0,
                })
                .collect();
            for s in samples {
                let truth_bin = s.bin(f.n_classes);
                acc[truth_bin].count += 1;
                if model.predict_bin(&s.features) == Some(truth_bin) {
                    acc[truth_bin].correct += 1;
                }
            }
            Some(acc)
        }
        Learner::Mlp(_) => None,
    };

    Ok(EvalReport {
        model_kind: model.kind().to_string(),
        model_fingerprint: model.fingerprint(),
        n: samples.len(),
        model_mae_deg: circular_mae(&predicted, &truth)?,
        baseline_mae_deg: circular_mae(&baseline, &truth)?,
        per_bin,
        model_histogram: histogram_from(&model_err, HISTOGRAM_WIDTH_DEG, 0.0)?,
        baseline_histogram: histogram_from(&base_err, HISTOGRAM_WIDTH_DEG, 0.0)?,
        model_cdf: cdf(&model_err)?,
        baseline_cdf: cdf(&base_err)?,
    })
}

impl EvalReport {
    /// `key = value` summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model.kind = {}", self.model_kind);
        let _ = writeln!(s, "model.fingerprint = {}", self.model_fingerprint);
        let _ = writeln!(s, "samples = {}", self.n);
        let _ = writeln!(s, "model.mae_deg = {}", self.model_mae_deg);
        let _ = writeln!(s, "baseline.mae_deg = {}", self.baseline_mae_deg);
        let _ = writeln!(s, "mae_ratio = {}", self.model_mae_deg / self.baseline_mae_deg);
        if let Some(bins) = &self.per_bin {
            for b in bins {
                let acc = if b.count > 0 { b.correct as f64 / b.count as f64 } else { 0.0 };
                let _ = writeln!(s, "bin.{}.accuracy = {acc} ({}/{})", b.bin, b.correct, b.count);
            }
        }
        s
    }

    /// Absolute-error histogram with model and baseline counts side by side.
    pub fn histogram_csv(&self) -> String {
        let (DistributionTable::Histogram { edges: me, counts: mc }, DistributionTable::Histogram { edges: be, counts: bc }) =
            (&self.model_histogram, &self.baseline_histogram)
        else {
            unreachable!("histogram tables")
        };
        // Both tables start at 0, so the longer edge list covers both.
        let nb = mc.len().max(bc.len());
        let edges = if me.len() >= be.len() { me } else { be };
        let mut s = String::from("lower_deg,upper_deg,model_count,baseline_count\n");
        for i in 0..nb {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                edges[i],
                edges[i + 1],
                mc.get(i).copied().unwrap_or(0),
                bc.get(i).copied().unwrap_or(0)
            );
        }
        s
    }

    /// Long-format CDF table: `source,error_deg,fraction`.
    pub fn cdf_csv(&self) -> String {
        let mut s = String::from("source,error_deg,fraction\n");
        for (name, t) in [("model", &self.model_cdf), ("baseline", &self.baseline_cdf)] {
            if let DistributionTable::Cdf { values, fractions } = t {
                for (v, f) in values.iter().zip(fractions) {
                    let _ = writeln!(s, "{name},{v},{f}");
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::to_labeled;
    use crate::models::{train_rf, ForestParams};
    use crate::simulate::{run_batch, SimConfig};

    #[test]
    fn report_has_both_columns_and_is_stable() {
        let cfg = SimConfig::new(0.1, 10_000.0, 3).unwrap();
        let obs = run_batch(&cfg, 400).unwrap();
        let samples: Vec<_> = obs.iter().map(|o| to_labeled(o, &cfg.geometry)).collect();
        let model = train_rf(
            &samples[..300],
            &ForestParams {
                n_trees: 10,
                ..ForestParams::default()
            },
        )
        .unwrap();
        let a = evaluate(&model, &samples[300..], &cfg.geometry, &cfg.medium, 150.0).unwrap();
        let b = evaluate(&model, &samples[300..], &cfg.geometry, &cfg.medium, 150.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.summary(), b.summary());
        assert!(a.summary().contains("baseline.mae_deg"));
        assert!(a.histogram_csv().starts_with("lower_deg,upper_deg,model_count,baseline_count\n"));
        let bins = a.per_bin.as_ref().unwrap();
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 100);
        let rows: usize = a
            .histogram_csv()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(rows, 100);
    }
}
