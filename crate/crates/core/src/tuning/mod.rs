//! Seeded random search over hyperparameter spaces, scored by stratified
//! k-fold cross-validated log loss.

mod cv;
mod search;
mod space;

use thiserror::Error;

pub use cv::{cross_validate, stratified_folds, CvFolds, Fold, Learner};
pub use search::{search, search_candidates, write_trial_log, Budget, SearchOutcome, TrialRecord};
pub use space::{sample_config, Param, SearchSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuningError {
    #[error("search space: {0}")]
    Space(String),
    #[error("need k >= 2 folds and at least k rows (k = {k}, rows = {rows})")]
    Folds { k: usize, rows: usize },
    #[error("budget needs a finite trial count or wall clock")]
    UnboundedBudget,
    #[error("budget exhausted with no completed trial ({0} attempted)")]
    BudgetExhausted(usize),
}
