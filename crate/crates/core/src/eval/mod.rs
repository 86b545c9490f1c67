//! Scoring, ablations and map export.

mod ablation;
mod experiment;
mod geojson;
mod metrics;
mod report;

use thiserror::Error;

pub use ablation::{
    mean_macro_f1, run_ablation, write_ablation_csv, AblationAxis, AblationPlan, AblationRow, AblationVariant,
};
pub use experiment::{Experiment, Outcome};
pub use geojson::{export_geojson, modal, validate_geojson, CellTally, MapExport};
pub use metrics::{
    accuracy, confusion, log_loss, macro_f1, ClassScore, ConfusionMatrix, F1Report, LOG_LOSS_EPS,
};
pub use report::{write_confusion, MetricsReport, Provenance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{what}: lengths differ ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("nothing to evaluate")]
    Empty,
    #[error("label {0} outside the class set")]
    Label(usize),
    #[error("row {row} is not a probability vector (sum {sum})")]
    NotSimplex { row: usize, sum: f64 },
    #[error("ablation plan: {0}")]
    Plan(String),
    #[error("geojson: {0}")]
    GeoJson(String),
}
