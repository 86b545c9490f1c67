use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, confusion, log_loss, macro_f1, ClassScore, ConfusionMatrix};
use super::EvalError;
use crate::models::argmax_rows;

/// Identifies the run a report came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub run_config_hash: String,
    pub feature_fingerprint: String,
    pub split_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: usize,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub log_loss: f64,
    pub per_class: Vec<ClassScore>,
    /// Convention used for undefined per-class scores.
    pub zero_division: String,
    #[serde(flatten)]
    pub provenance: Provenance,
}

impl MetricsReport {
    /// Scores for probability rows against labels; predictions are the
    /// row-wise argmax.
    pub fn compute(probs: &Array2<f64>, labels: &[usize], provenance: Provenance) -> Result<Self, EvalError> {
        let loss = log_loss(probs, labels)?;
        let preds = argmax_rows(probs);
        let f1 = macro_f1(&preds, labels)?;
        Ok(MetricsReport {
            records: labels.len(),
            macro_f1: f1.macro_f1,
            accuracy: accuracy(&preds, labels)?,
            log_loss: loss,
            per_class: f1.per_class,
            zero_division: "0/0 -> 0".into(),
            provenance,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), crate::Error> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| crate::Error::io(path, e))
    }
}

/// `confusion.csv` and `confusion_normalized.csv` under `dir`.
pub fn write_confusion(
    dir: impl AsRef<Path>,
    probs: &Array2<f64>,
    labels: &[usize],
    run_config_hash: &str,
) -> Result<ConfusionMatrix, crate::Error> {
    let dir = dir.as_ref();
    let cm = confusion(&argmax_rows(probs), labels)?;
    for (name, body) in [
        ("confusion.csv", cm.counts_csv(run_config_hash)),
        ("confusion_normalized.csv", cm.normalized_csv(run_config_hash)),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| crate::Error::io(&path, e))?;
    }
    Ok(cm)
}
