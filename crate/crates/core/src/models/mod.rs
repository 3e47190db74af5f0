//! Learned azimuth estimators and their on-disk container.
//!
//! Model file layout (UTF-8 text):
//!
//! ```text
//! MICLOC-MODEL
//! version 1
//! sha256 <hex digest of the JSON line>
//! <single-line JSON body: scaler, learner, metadata>
//! ```
//!
//! The JSON body stores every float in shortest round-trip form, so loading
//! reproduces each parameter bit for bit.

pub mod forest;
pub mod mlp;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use forest::{DecisionTree, ForestParams, Node, RandomForest};
pub use mlp::{AngleTarget, MlpParams, MlpRegressor};

use crate::dataset::{self, FeatureScaler, LabeledSample, N_FEATURES};
use crate::error::{Error, Result};
use crate::geometry::angular_distance_deg;
use crate::simulate::TdoaPair;

pub const MODEL_MAGIC: &str = "MICLOC-MODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Learner {
    Forest(RandomForest),
    Mlp(MlpRegressor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub n_train: usize,
    /// Trees for a forest, epochs for an MLP.
    pub iterations: usize,
    /// SHA-256 of the training rows in dataset CSV form.
    pub dataset_fingerprint: String,
    /// Only one class was present, so the forest predicts a constant.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub scaler: FeatureScaler,
    pub learner: Learner,
    pub meta: TrainingMeta,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dataset_fingerprint(samples: &[LabeledSample]) -> String {
    let mut buf = Vec::new();
    dataset::write_csv(samples, &mut buf).expect("in-memory write");
    sha256_hex(&buf)
}

fn scaled_rows(scaler: &FeatureScaler, train: &[LabeledSample]) -> Vec<[f64; N_FEATURES]> {
    train.iter().map(|s| scaler.transform(&s.features.features())).collect()
}

pub fn train_rf(train: &[LabeledSample], params: &ForestParams) -> Result<TrainedModel> {
    params.validate()?;
    let scaler = FeatureScaler::fit_samples(train)?;
    let x = scaled_rows(&scaler, train);
    let y: Vec<usize> = train.iter().map(|s| s.bin(params.n_bins)).collect();
    let mut classes = y.clone();
    classes.sort_unstable();
    classes.dedup();
    let forest = RandomForest::fit(&x, &y, params)?;
    Ok(TrainedModel {
        scaler,
        learner: Learner::Forest(forest),
        meta: TrainingMeta {
            seed: params.seed,
            n_train: train.len(),
            iterations: params.n_trees,
            dataset_fingerprint: dataset_fingerprint(train),
            degenerate: classes.len() < 2,
        },
    })
}

pub fn train_mlp(train: &[LabeledSample], params: &MlpParams) -> Result<TrainedModel> {
    params.validate()?;
    let scaler = FeatureScaler::fit_samples(train)?;
    let x: Vec<Vec<f64>> = scaled_rows(&scaler, train).into_iter().map(|r| r.to_vec()).collect();
    let az: Vec<f64> = train.iter().map(|s| s.azimuth_deg).collect();
    let net = mlp::train(&x, &az, params)?;
    Ok(TrainedModel {
        scaler,
        learner: Learner::Mlp(net),
        meta: TrainingMeta {
            seed: params.seed,
            n_train: train.len(),
            iterations: params.epochs,
            dataset_fingerprint: dataset_fingerprint(train),
            degenerate: false,
        },
    })
}

/// Forest prediction: `(bin, bin-centre angle)`.
pub fn predict_rf(forest: &RandomForest, scaled: &[f64; N_FEATURES]) -> (usize, f64) {
    let bin = forest.predict_bin(scaled);
    (bin, forest.bin_center_deg(bin))
}

/// MLP prediction in degrees, `[0, 360)`.
pub fn predict_mlp(net: &MlpRegressor, scaled: &[f64; N_FEATURES]) -> f64 {
    net.predict_deg(scaled)
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self.learner {
            Learner::Forest(_) => "rf",
            Learner::Mlp(_) => "mlp",
        }
    }

    pub fn predict_azimuth(&self, tdoa: &TdoaPair) -> Result<f64> {
        if !tdoa.is_finite() || !tdoa.ratio.is_finite() {
            return Err(Error::domain("features must be finite"));
        }
        let z = self.scaler.transform(&tdoa.features());
        Ok(match &self.learner {
            Learner::Forest(f) => predict_rf(f, &z).1,
            Learner::Mlp(n) => predict_mlp(n, &z),
        })
    }

    /// Forest bin for `tdoa`, `None` for regressors.
    pub fn predict_bin(&self, tdoa: &TdoaPair) -> Option<usize> {
        match &self.learner {
            Learner::Forest(f) => Some(f.predict_bin(&self.scaler.transform(&tdoa.features()))),
            Learner::Mlp(_) => None,
        }
    }

    fn body(&self) -> String {
        serde_json::to_string(self).expect("model serialises")
    }

    /// SHA-256 of the serialised parameters.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.body().as_bytes())
    }

    pub fn to_text(&self) -> String {
        let body = self.body();
        format!(
            "{MODEL_MAGIC}\nversion {MODEL_VERSION}\nsha256 {}\n{body}\n",
            sha256_hex(body.as_bytes())
        )
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let err = |line: u64, message: &str| Error::Parse {
            path: source.into(),
            line,
            message: message.to_string(),
        };
        let mut lines = text.split('\n');
        if lines.next() != Some(MODEL_MAGIC) {
            return Err(err(1, "not a model file (bad magic line)"));
        }
        let version = lines
            .next()
            .and_then(|l| l.strip_prefix("version "))
            .ok_or_else(|| err(2, "missing version line"))?;
        if version != MODEL_VERSION.to_string() {
            return Err(Error::Version {
                found: version.to_string(),
                expected: MODEL_VERSION.to_string(),
            });
        }
        let digest = lines
            .next()
            .and_then(|l| l.strip_prefix("sha256 "))
            .ok_or_else(|| err(3, "missing checksum line"))?;
        let body = lines.next().ok_or_else(|| err(4, "missing model body"))?;
        if sha256_hex(body.as_bytes()) != digest {
            return Err(err(4, "checksum mismatch (truncated or modified file)"));
        }
        serde_json::from_str(body).map_err(|e| err(4, &e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// Mean of `min(|Δ|, 360 - |Δ|)`.
pub fn circular_mae(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::domain(format!(
            "circular MAE needs equal non-empty lengths, got {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    let s: f64 = predicted.iter().zip(truth).map(|(p, t)| angular_distance_deg(*p, *t)).sum();
    Ok(s / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples(n: usize) -> Vec<LabeledSample> {
        (0..n)
            .map(|i| {
                let az = (i as f64 * 37.0) % 360.0;
                let (s, c) = az.to_radians().sin_cos();
                LabeledSample::new(TdoaPair::new(s * 2e-4, c * 2e-4), az, 0.0, 0.0, i as u64)
            })
            .collect()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(circular_mae(&[1.0], &[359.0]).unwrap(), 2.0);
        assert_eq!(circular_mae(&[5.0, 6.0], &[5.0, 6.0]).unwrap(), 0.0);
        assert_eq!(circular_mae(&[10.0, 70.0], &[0.0, 90.0]).unwrap(), 15.0);
        assert!(circular_mae(&[1.0], &[]).is_err());
    }

    #[test]
    fn round_trip_rf_and_mlp() {
        let data = samples(200);
        let rf = train_rf(
            &data,
            &ForestParams {
                n_trees: 5,
                ..ForestParams::default()
            },
        )
        .unwrap();
        let mlp = train_mlp(
            &data,
            &MlpParams {
                epochs: 3,
                hidden: vec![8, 8],
                ..MlpParams::default()
            },
        )
        .unwrap();
        for m in [rf, mlp] {
            let back = TrainedModel::from_text(&m.to_text(), "mem").unwrap();
            assert_eq!(back, m);
            assert_eq!(back.fingerprint(), m.fingerprint());
            for s in &data {
                let (a, b) = (m.predict_azimuth(&s.features).unwrap(), back.predict_azimuth(&s.features).unwrap());
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn load_errors() {
        let m = train_rf(
            &samples(50),
            &ForestParams {
                n_trees: 2,
                ..ForestParams::default()
            },
        )
        .unwrap();
        let text = m.to_text();
        let cut = &text[..text.len() / 2];
        assert!(matches!(TrainedModel::from_text(cut, "m"), Err(Error::Parse { .. })));
        let v2 = text.replacen("version 1", "version 2", 1);
        assert!(matches!(TrainedModel::from_text(&v2, "m"), Err(Error::Version { .. })));
        assert!(matches!(TrainedModel::from_text("junk", "m"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn single_class_is_degenerate() {
        let data: Vec<_> = samples(20).into_iter().map(|mut s| {
            s.bin12 = 4;
            s
        }).collect();
        let m = train_rf(
            &data,
            &ForestParams {
                n_trees: 3,
                ..ForestParams::default()
            },
        )
        .unwrap();
        assert!(m.meta.degenerate);
        assert_eq!(m.predict_azimuth(&data[3].features).unwrap(), 120.0);
    }

    #[test]
    fn rescaled_features_same_bins() {
        let data = samples(300);
        let scaled: Vec<_> = data
            .iter()
            .map(|s| {
                let mut t = *s;
                t.features = TdoaPair::new(s.features.tau21 * 1e3, s.features.tau31 * 1e3);
                t
            })
            .collect();
        let p = ForestParams {
            n_trees: 9,
            ..ForestParams::default()
        };
        let a = train_rf(&data, &p).unwrap();
        let b = train_rf(&scaled, &p).unwrap();
        for (x, y) in data.iter().zip(&scaled) {
            assert_eq!(a.predict_bin(&x.features), b.predict_bin(&y.features));
        }
    }

    proptest! {
        #[test]
        fn mae_bounded(v in prop::collection::vec((0.0f64..360.0, 0.0f64..360.0), 1..50)) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let m = circular_mae(&p, &t).unwrap();
            prop_assert!((0.0..=180.0).contains(&m));
            prop_assert_eq!(circular_mae(&p, &p).unwrap(), 0.0);
        }
    }
}
