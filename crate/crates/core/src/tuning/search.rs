use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::cv::{cross_validate, CvFolds, Learner};
use super::space::{sample_config, SearchSpace};
use super::TuningError;
use crate::models::ModelSpec;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_trials: Option<usize>,
    pub max_wall_clock: Option<Duration>,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_trials: Some(100),
            max_wall_clock: Some(Duration::from_secs(48 * 3600)),
        }
    }
}

impl Budget {
    pub fn trials(n: usize) -> Self {
        Budget {
            max_trials: Some(n),
            max_wall_clock: None,
        }
    }

    pub fn validate(&self) -> Result<(), TuningError> {
        if self.max_trials.is_none() && self.max_wall_clock.is_none() {
            return Err(TuningError::UnboundedBudget);
        }
        Ok(())
    }
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: Value,
    pub fold_losses: Vec<f64>,
    pub mean: Option<f64>,
    /// Population standard deviation over folds.
    pub std: Option<f64>,
    pub duration_secs: f64,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

impl TrialRecord {
    fn new(trial: usize, config: Value, result: Result<Vec<f64>, crate::Error>, warnings: Vec<String>, took: Duration) -> Self {
        let (fold_losses, error) = match result {
            Ok(l) => (l, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
        let finite = !fold_losses.is_empty() && fold_losses.iter().all(|l| l.is_finite());
        let (mean, std) = if finite {
            let n = fold_losses.len() as f64;
            let m = fold_losses.iter().sum::<f64>() / n;
            let v = fold_losses.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / n;
            (Some(m), Some(v.sqrt()))
        } else {
            (None, None)
        };
        TrialRecord {
            trial,
            config,
            fold_losses,
            mean,
            std,
            duration_secs: took.as_secs_f64(),
            warnings,
            error,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<L> {
    pub best: TrialRecord,
    pub best_learner: L,
    pub trials: Vec<TrialRecord>,
}

/// Evaluate candidates in order until the budget runs out. The winner has
/// the lowest mean loss; ties go to the earlier trial.
pub fn search_candidates<L: Learner + Clone>(
    candidates: impl IntoIterator<Item = Result<L, crate::Error>>,
    folds: &CvFolds,
    budget: &Budget,
) -> Result<SearchOutcome<L>, crate::Error> {
    budget.validate()?;
    let start = Instant::now();
    let mut trials = Vec::new();
    let mut best: Option<(usize, f64, L)> = None;
    for (t, cand) in candidates.into_iter().enumerate() {
        if budget.max_trials.is_some_and(|m| t >= m) || budget.max_wall_clock.is_some_and(|w| start.elapsed() >= w) {
            break;
        }
        let began = Instant::now();
        let cand = cand?;
        let result = cross_validate(&cand, folds);
        let rec = TrialRecord::new(t, cand.config(), result, folds.warnings.clone(), began.elapsed());
        match (rec.mean, &rec.error) {
            (Some(m), _) => log::info!("trial {t}: mean log loss {m:.5}"),
            (None, Some(e)) => log::warn!("trial {t} failed: {e}"),
            (None, None) => log::warn!("trial {t}: non-finite loss"),
        }
        if let Some(m) = rec.mean {
            if best.as_ref().is_none_or(|b| m < b.1) {
                best = Some((t, m, cand));
            }
        }
        trials.push(rec);
    }
    match best {
        Some((t, _, learner)) => Ok(SearchOutcome {
            best: trials[t].clone(),
            best_learner: learner,
            trials,
        }),
        None => Err(TuningError::BudgetExhausted(trials.len()).into()),
    }
}

/// Seeded random search over `space`. Trial `t` uses the configuration
/// drawn from `derive_seed(seed, [t])`, which is also its model seed.
pub fn search(space: &SearchSpace, folds: &CvFolds, budget: &Budget, seed: u64) -> Result<SearchOutcome<ModelSpec>, crate::Error> {
    space.validate()?;
    let candidates = (0..).map(|t| sample_config(space, derive_seed(seed, &[t])).map_err(crate::Error::from));
    search_candidates(candidates, folds, budget)
}

/// Line-delimited JSON: a header object, then one line per trial.
pub fn write_trial_log(path: impl AsRef<Path>, header: &Value, trials: &[TrialRecord]) -> Result<(), crate::Error> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    serde_json::to_writer(&mut w, header)?;
    writeln!(w).map_err(io)?;
    for t in trials {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::super::cv::tests::{matrix, Uniform};
    use super::*;
    use crate::features::FeatureMatrix;
    use crate::models::ModelFamily;
    use crate::N_CLASSES;
    use ndarray::Array2;

    /// Training-prior classifier mixed with a share `w` of the uniform
    /// distribution.
    #[derive(Debug, Clone)]
    struct Prior {
        w: f64,
    }

    impl Learner for Prior {
        fn fit_predict(&self, train: &FeatureMatrix, valid: &FeatureMatrix) -> Result<Array2<f64>, crate::Error> {
            let mut p = [0.0; N_CLASSES];
            train.y.iter().for_each(|&c| p[c] += 1.0 / train.rows() as f64);
            Ok(Array2::from_shape_fn((valid.rows(), N_CLASSES), |(_, c)| {
                (1.0 - self.w) * p[c] + self.w / N_CLASSES as f64
            }))
        }
        fn config(&self) -> Value {
            serde_json::json!({ "w": self.w })
        }
    }

    fn skewed() -> FeatureMatrix {
        // per-class counts are multiples of 3, so every fold's held-out
        // distribution equals its training distribution
        let counts = [30, 3, 12, 6, 27, 3, 9, 3, 15];
        matrix(counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect())
    }

    #[test]
    fn planted_optimum_is_recovered() {
        let folds = CvFolds::from_matrix(&skewed(), 3, 4).unwrap();
        // by Gibbs' inequality the exact prior (w = 0) minimises held-out
        // cross-entropy when held-out and training distributions match
        let ws = [0.9, 0.3, 0.05, 0.0, 0.5, 0.01, 0.2];
        let out = search_candidates(ws.iter().map(|&w| Ok(Prior { w })), &folds, &Budget::trials(10)).unwrap();
        assert_eq!(out.best.trial, 3);
        assert_eq!(out.best_learner.w, 0.0);
        assert_eq!(out.trials.len(), ws.len());
        let mut running = f64::INFINITY;
        for t in &out.trials {
            let m = t.fold_losses.iter().sum::<f64>() / t.fold_losses.len() as f64;
            assert!((t.mean.unwrap() - m).abs() < 1e-15);
            assert_eq!(t.fold_losses.len(), 3);
            let next = running.min(m);
            assert!(next <= running);
            running = next;
        }
    }

    #[test]
    fn single_trial_budget() {
        let folds = CvFolds::from_matrix(&skewed(), 3, 4).unwrap();
        let out = search_candidates((0..).map(|_| Ok(Uniform)), &folds, &Budget::trials(1)).unwrap();
        assert_eq!(out.trials.len(), 1);
        assert_eq!(out.best.trial, 0);
        assert_eq!(out.best.std, Some(0.0));
    }

    #[test]
    fn zero_wall_clock_exhausts() {
        let folds = CvFolds::from_matrix(&skewed(), 3, 4).unwrap();
        let budget = Budget {
            max_trials: None,
            max_wall_clock: Some(Duration::ZERO),
        };
        let err = search_candidates((0..).map(|_| Ok(Uniform)), &folds, &budget).unwrap_err();
        assert!(matches!(err, crate::Error::Tuning(TuningError::BudgetExhausted(0))));
        let unbounded = Budget {
            max_trials: None,
            max_wall_clock: None,
        };
        assert!(search_candidates((0..).map(|_| Ok(Uniform)), &folds, &unbounded).is_err());
    }

    #[test]
    fn ties_keep_the_earlier_trial() {
        let folds = CvFolds::from_matrix(&skewed(), 3, 4).unwrap();
        let out = search_candidates([0.5, 0.0, 0.0].map(|w| Ok(Prior { w })), &folds, &Budget::trials(3)).unwrap();
        assert_eq!(out.best.trial, 1);
    }

    #[test]
    fn random_search_is_reproducible() {
        let m = {
            let mut m = skewed();
            for i in 0..m.rows() {
                m.x[[i, 0]] = m.y[i] as f64 + 0.1 * (i % 3) as f64;
            }
            m
        };
        let folds = CvFolds::from_matrix(&m, 3, 2).unwrap();
        let space = SearchSpace::published(ModelFamily::Knn);
        let a = search(&space, &folds, &Budget::trials(4), 8).unwrap();
        let b = search(&space, &folds, &Budget::trials(4), 8).unwrap();
        assert_eq!(a.best_learner, b.best_learner);
        let strip = |t: &[TrialRecord]| t.iter().map(|r| (r.config.clone(), r.fold_losses.clone())).collect::<Vec<_>>();
        assert_eq!(strip(&a.trials), strip(&b.trials));
        for t in &a.trials {
            let spec: ModelSpec = serde_json::from_value(t.config.clone()).unwrap();
            assert!(space.contains(&spec));
        }
    }

    #[test]
    fn trial_log_has_header_and_rows() {
        let folds = CvFolds::from_matrix(&skewed(), 3, 4).unwrap();
        let out = search_candidates([0.5, 0.0].map(|w| Ok(Prior { w })), &folds, &Budget::trials(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        write_trial_log(&path, &serde_json::json!({"kind": "header"}), &out.trials).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let back: TrialRecord = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(back, out.trials[1]);
    }
}
