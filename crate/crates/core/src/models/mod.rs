//! Classifiers returning 9-class probability vectors.
//!
//! Every family is fitted from a feature matrix and labels through
//! [`fit`] and wrapped in a [`TrainedModel`], which checks the input
//! dimension before predicting. Rows of `predict_proba` always lie on the
//! probability simplex.

mod bridge;
mod gbt;
mod io;
mod knn;
mod mlp;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::N_CLASSES;

pub use bridge::{read_external_predictions, write_predictions, ExternalPredictions};
pub use gbt::{GbtModel, GbtParams, Node, Tree};
pub use io::{load_model, save_model, ModelFile, MODEL_FORMAT_VERSION};
pub use knn::{KnnModel, KnnParams, Metric};
pub use mlp::{gradient_check, MlpModel, MlpParams, NetConfig, RmlpParams, TrainingTrace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid {name} = {value} for {family}")]
    InvalidParameter {
        family: ModelFamily,
        name: &'static str,
        value: String,
    },
    #[error("k = {k} exceeds the {n} training rows")]
    InvalidK { k: usize, n: usize },
    #[error("empty training set")]
    EmptyTraining,
    #[error("labels ({labels}) and rows ({rows}) differ in length")]
    LabelCount { labels: usize, rows: usize },
    #[error("label {0} outside the class set")]
    Label(usize),
    #[error("model expects {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("model was trained on feature spec {expected}, data has {got}")]
    Fingerprint { expected: String, got: String },
    #[error("training diverged at {stage} {step}")]
    Diverged { stage: &'static str, step: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("external predictions: {0}")]
    Bridge(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Knn,
    Gbt,
    Mlp,
    Rmlp,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [ModelFamily::Knn, ModelFamily::Gbt, ModelFamily::Mlp, ModelFamily::Rmlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Knn => "knn",
            ModelFamily::Gbt => "gbt",
            ModelFamily::Mlp => "mlp",
            ModelFamily::Rmlp => "rmlp",
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model family '{s}' (knn, gbt, mlp, rmlp)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelParams {
    Knn(KnnParams),
    Gbt(GbtParams),
    Mlp(MlpParams),
    Rmlp(RmlpParams),
}

impl ModelParams {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelParams::Knn(_) => ModelFamily::Knn,
            ModelParams::Gbt(_) => ModelFamily::Gbt,
            ModelParams::Mlp(_) => ModelFamily::Mlp,
            ModelParams::Rmlp(_) => ModelFamily::Rmlp,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelParams::Knn(p) => p.validate(),
            ModelParams::Gbt(p) => p.validate(),
            ModelParams::Mlp(p) => p.validate(ModelFamily::Mlp),
            ModelParams::Rmlp(p) => p.validate(),
        }
    }
}

/// A model family, its hyperparameters and the seed used to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub params: ModelParams,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        ModelSpec { params, seed }
    }

    pub fn family(&self) -> ModelFamily {
        self.params.family()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Fitted {
    Knn(KnnModel),
    Gbt(GbtModel),
    Mlp(MlpModel),
}

/// A fitted classifier plus the contract it was fitted under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub dimension: usize,
    pub fingerprint: Option<String>,
    pub classes: Vec<String>,
    pub fitted: Fitted,
}

pub(crate) fn check_training(x: &Array2<f64>, y: &[usize]) -> Result<(), ModelError> {
    if x.nrows() == 0 {
        return Err(ModelError::EmptyTraining);
    }
    if y.len() != x.nrows() {
        return Err(ModelError::LabelCount {
            labels: y.len(),
            rows: x.nrows(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= N_CLASSES) {
        return Err(ModelError::Label(bad));
    }
    Ok(())
}

/// Fit `spec` on `(x, y)`.
pub fn fit(spec: &ModelSpec, x: &Array2<f64>, y: &[usize]) -> Result<TrainedModel, ModelError> {
    check_training(x, y)?;
    spec.params.validate()?;
    let fitted = match &spec.params {
        ModelParams::Knn(p) => Fitted::Knn(KnnModel::fit(p, x, y)?),
        ModelParams::Gbt(p) => Fitted::Gbt(GbtModel::fit(p, x, y, spec.seed)?),
        ModelParams::Mlp(p) => Fitted::Mlp(MlpModel::fit(&NetConfig::from(p), x, y, spec.seed)?),
        ModelParams::Rmlp(p) => Fitted::Mlp(MlpModel::fit(&NetConfig::from(p), x, y, spec.seed)?),
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        dimension: x.ncols(),
        fingerprint: None,
        classes: crate::ingest::Activity::names().into_iter().map(String::from).collect(),
        fitted,
    })
}

impl TrainedModel {
    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.fingerprint = Some(fingerprint.into());
        self
    }

    pub fn family(&self) -> ModelFamily {
        self.spec.family()
    }

    /// Refuse data built under a different feature spec.
    pub fn check_fingerprint(&self, fingerprint: &str) -> Result<(), ModelError> {
        match &self.fingerprint {
            Some(f) if f != fingerprint => Err(ModelError::Fingerprint {
                expected: f.clone(),
                got: fingerprint.to_string(),
            }),
            _ => Ok(()),
        }
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        if x.ncols() != self.dimension {
            return Err(ModelError::Dimension {
                expected: self.dimension,
                got: x.ncols(),
            });
        }
        Ok(match &self.fitted {
            Fitted::Knn(m) => m.predict_proba(x),
            Fitted::Gbt(m) => m.predict_proba(x),
            Fitted::Mlp(m) => m.predict_proba(x),
        })
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>, ModelError> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_rows(p: &Array2<f64>) -> Vec<usize> {
    p.outer_iter().map(argmax).collect()
}

/// Numerically stable softmax of `z` in place.
pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let y = (0..n)
            .map(|i| {
                let s: f64 = x.row(i).sum();
                ((s + 8.0) as usize / 2).min(N_CLASSES - 1)
            })
            .collect();
        (x, y)
    }

    fn specs() -> Vec<ModelSpec> {
        vec![
            ModelSpec::new(ModelParams::Knn(KnnParams { k: 5, metric: Metric::L2 }), 1),
            ModelSpec::new(
                ModelParams::Gbt(GbtParams {
                    num_round: 5,
                    max_depth: 3,
                    ..GbtParams::default()
                }),
                1,
            ),
            ModelSpec::new(
                ModelParams::Mlp(MlpParams {
                    hidden_layers: 2,
                    units: 8,
                    max_epochs: 5,
                    ..MlpParams::default()
                }),
                1,
            ),
            ModelSpec::new(
                ModelParams::Rmlp(RmlpParams {
                    base: MlpParams {
                        hidden_layers: 2,
                        units: 8,
                        max_epochs: 5,
                        ..MlpParams::default()
                    },
                    ..RmlpParams::default()
                }),
                1,
            ),
        ]
    }

    #[test]
    fn every_family_outputs_simplex_rows() {
        let (x, y) = toy(120, 4, 3);
        let (q, _) = toy(50, 4, 4);
        for spec in specs() {
            let m = fit(&spec, &x, &y).unwrap();
            let p = m.predict_proba(&q).unwrap();
            assert_eq!(p.dim(), (50, N_CLASSES));
            for row in p.outer_iter() {
                assert!(row.iter().all(|&v| v >= 0.0), "{}", spec.family());
                assert!((row.sum() - 1.0).abs() <= 1e-9, "{}", spec.family());
            }
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let (x, y) = toy(100, 3, 5);
        for spec in specs() {
            let a = fit(&spec, &x, &y).unwrap().predict_proba(&x).unwrap();
            let b = fit(&spec, &x, &y).unwrap().predict_proba(&x).unwrap();
            assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (x, y) = toy(30, 3, 1);
        let m = fit(&specs()[0], &x, &y).unwrap();
        let wrong = Array2::zeros((2, 4));
        assert!(matches!(
            m.predict_proba(&wrong),
            Err(ModelError::Dimension { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let (x, y) = toy(30, 3, 1);
        let m = fit(&specs()[0], &x, &y).unwrap().with_fingerprint("abc");
        assert!(m.check_fingerprint("abc").is_ok());
        assert!(m.check_fingerprint("abd").is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let p = ndarray::array![[0.25, 0.25, 0.5, 0.0], [0.5, 0.5, 0.0, 0.0]];
        assert_eq!(argmax_rows(&p), vec![2, 0]);
    }

    #[test]
    fn spec_json_round_trip() {
        for spec in specs() {
            let s = serde_json::to_string(&spec).unwrap();
            assert!(s.contains(&format!("\"family\":\"{}\"", spec.family())));
            let back: ModelSpec = serde_json::from_str(&s).unwrap();
            assert_eq!(back, spec);
        }
    }
}
