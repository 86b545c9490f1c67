use ndarray::Array2;

use super::report::{MetricsReport, Provenance};
use super::EvalError;
use crate::features::{FeatureMatrix, FeaturePipeline, FeatureSpec};
use crate::geodesy::EarthModel;
use crate::grid::GridSystem;
use crate::ingest::Dataset;
use crate::models::{self, ModelSpec, TrainedModel};

/// Shared context for fit-on-train, score-on-test runs.
#[derive(Debug, Clone)]
pub struct Experiment<'a> {
    pub dataset: &'a Dataset,
    pub earth: EarthModel,
    pub grids: &'a GridSystem,
    pub run_config_hash: String,
}

/// Everything produced by one train/test run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: MetricsReport,
    pub model: TrainedModel,
    pub pipeline: FeaturePipeline,
    pub test: FeatureMatrix,
    pub probs: Array2<f64>,
}

impl Experiment<'_> {
    /// Fit features and model on the training split, score the test split.
    pub fn run(&self, features: &FeatureSpec, model: &ModelSpec) -> Result<Outcome, crate::Error> {
        let train = self.dataset.train();
        let test = self.dataset.test();
        if test.is_empty() {
            return Err(EvalError::Empty.into());
        }
        let pipeline = FeaturePipeline::fit(features, &train, self.dataset.city.center, self.earth, self.grids)?;
        let xtr = pipeline.transform(&train)?;
        let xte = pipeline.transform(&test)?;
        let fitted = models::fit(model, &xtr.x, &xtr.y)?.with_fingerprint(features.fingerprint());
        let probs = fitted.predict_proba(&xte.x)?;
        let report = MetricsReport::compute(&probs, &xte.y, self.provenance(features, model.seed))?;
        Ok(Outcome {
            report,
            model: fitted,
            pipeline,
            test: xte,
            probs,
        })
    }

    pub fn provenance(&self, features: &FeatureSpec, seed: u64) -> Provenance {
        Provenance {
            seed,
            run_config_hash: self.run_config_hash.clone(),
            feature_fingerprint: features.fingerprint(),
            split_fingerprint: self.dataset.split_fingerprint(),
        }
    }
}
