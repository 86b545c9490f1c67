use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ingest::Activity;
use crate::N_CLASSES;

/// Probabilities are clipped to `[LOG_LOSS_EPS, 1 - LOG_LOSS_EPS]`.
pub const LOG_LOSS_EPS: f64 = 1e-15;

const SIMPLEX_TOLERANCE: f64 = 1e-6;

fn check_lengths(what: &'static str, a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch { what, left: a, right: b });
    }
    Ok(())
}

fn check_labels(labels: &[usize]) -> Result<(), EvalError> {
    match labels.iter().find(|&&c| c >= N_CLASSES) {
        Some(&c) => Err(EvalError::Label(c)),
        None => Ok(()),
    }
}

/// Mean negative log-probability of the true class.
pub fn log_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<f64, EvalError> {
    check_lengths("probability rows vs labels", probs.nrows(), labels.len())?;
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    if probs.ncols() != N_CLASSES {
        return Err(EvalError::LengthMismatch {
            what: "probability columns vs classes",
            left: probs.ncols(),
            right: N_CLASSES,
        });
    }
    check_labels(labels)?;
    let mut total = 0.0;
    for (i, (row, &y)) in probs.outer_iter().zip(labels).enumerate() {
        let sum: f64 = row.sum();
        if !(sum - 1.0).abs().le(&SIMPLEX_TOLERANCE) || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(EvalError::NotSimplex { row: i, sum });
        }
        total -= row[y].clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS).ln();
    }
    Ok(total / labels.len() as f64)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, EvalError> {
    check_lengths("predictions vs labels", preds.len(), labels.len())?;
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub activity: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

/// Per-class scores for all nine classes; `macro_f1` averages the classes
/// that occur in the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<ClassScore>,
    pub macro_f1: f64,
}

/// `a / b`, with 0/0 scored as 0.
fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn macro_f1(preds: &[usize], labels: &[usize]) -> Result<F1Report, EvalError> {
    let cm = confusion(preds, labels)?;
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut per_class = Vec::with_capacity(N_CLASSES);
    let (mut sum, mut present) = (0.0, 0usize);
    for c in 0..N_CLASSES {
        let tp = cm.counts[c][c];
        let support = cm.support(c);
        let predicted = cm.predicted(c);
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        // 2tp / (2tp + fp + fn), which is 0 when the class is neither
        // predicted nor present
        let f1 = ratio(2 * tp, predicted + support);
        if support > 0 {
            sum += f1;
            present += 1;
        }
        per_class.push(ClassScore {
            activity: Activity::ALL[c].name().to_string(),
            precision,
            recall,
            f1,
            support,
            predicted,
        });
    }
    Ok(F1Report {
        per_class,
        macro_f1: sum / present as f64,
    })
}

/// `counts[i][j]`: records of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> usize {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// Row-normalized view; rows without support are `None`.
    pub fn normalized(&self) -> Vec<Option<[f64; N_CLASSES]>> {
        self.counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row.map(|c| c as f64 / n as f64))
            })
            .collect()
    }

    /// Counts as CSV, true classes down, predicted across.
    pub fn counts_csv(&self, run_config_hash: &str) -> String {
        self.csv(run_config_hash, |i, j| self.counts[i][j].to_string())
    }

    /// Normalized CSV; unsupported rows are written as `NA`.
    pub fn normalized_csv(&self, run_config_hash: &str) -> String {
        let norm = self.normalized();
        self.csv(
            run_config_hash,
            |i, j| norm[i].map_or_else(|| "NA".to_string(), |r| r[j].to_string()),
        )
    }

    fn csv(&self, hash: &str, cell: impl Fn(usize, usize) -> String) -> String {
        let names = Activity::names();
        let mut out = format!("# run_config_hash={hash}\ntrue\\predicted,{}\n", names.join(","));
        for (i, name) in names.iter().enumerate() {
            out.push_str(name);
            for j in 0..N_CLASSES {
                out.push(',');
                out.push_str(&cell(i, j));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix, EvalError> {
    check_lengths("predictions vs labels", preds.len(), labels.len())?;
    check_labels(labels)?;
    check_labels(preds)?;
    let mut counts = [[0usize; N_CLASSES]; N_CLASSES];
    for (&p, &y) in preds.iter().zip(labels) {
        counts[y][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn uniform(n: usize) -> Array2<f64> {
        Array2::from_elem((n, N_CLASSES), 1.0 / N_CLASSES as f64)
    }

    #[test]
    fn uniform_loss_is_ln9() {
        let l = log_loss(&uniform(7), &[0, 1, 2, 3, 4, 5, 8]).unwrap();
        assert!((l - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_loss_is_near_zero() {
        let mut p = Array2::zeros((3, N_CLASSES));
        for (i, c) in [2, 5, 8].iter().enumerate() {
            p[[i, *c]] = 1.0;
        }
        assert!(log_loss(&p, &[2, 5, 8]).unwrap() <= 1e-14);
    }

    #[test]
    fn hand_set_loss() {
        let mut p = Array2::zeros((2, N_CLASSES));
        p[[0, 0]] = 0.5;
        p[[0, 1]] = 0.5;
        p[[1, 3]] = 0.25;
        p[[1, 4]] = 0.75;
        let l = log_loss(&p, &[0, 3]).unwrap();
        assert!((l - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
        assert!((l - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(log_loss(&uniform(2), &[0]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(log_loss(&uniform(0), &[]), Err(EvalError::Empty)));
        assert!(matches!(macro_f1(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(macro_f1(&[0], &[0, 1]), Err(EvalError::LengthMismatch { .. })));
        let mut bad = uniform(1);
        bad[[0, 0]] = 0.5;
        assert!(matches!(log_loss(&bad, &[0]), Err(EvalError::NotSimplex { .. })));
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 8];
        assert_eq!(macro_f1(&y, &y).unwrap().macro_f1, 1.0);
        let cm = confusion(&y, &y).unwrap();
        for i in 0..N_CLASSES {
            for j in 0..N_CLASSES {
                assert_eq!(cm.counts[i][j] > 0, i == j && y.contains(&i));
            }
        }
    }

    #[test]
    fn balanced_two_class_collapsed() {
        // class 0: tp 2, fp 2 -> p 1/2, r 1, f1 2/3; class 1: f1 0
        let r = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].precision, 0.0);
        let cm = confusion(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        let nonzero_cols: Vec<usize> = (0..N_CLASSES).filter(|&j| cm.predicted(j) > 0).collect();
        assert_eq!(nonzero_cols, vec![0]);
    }

    #[test]
    fn normalized_rows() {
        let cm = confusion(&[0, 1, 1, 2], &[0, 0, 1, 1]).unwrap();
        let n = cm.normalized();
        assert_eq!(n[0].unwrap()[..2], [0.5, 0.5]);
        assert_eq!(n[1].unwrap()[1..3], [0.5, 0.5]);
        assert!(n[2].is_none());
        assert_eq!(cm.total(), 4);
        let csv = cm.normalized_csv("h");
        assert_eq!(csv.lines().count(), 2 + N_CLASSES);
        assert!(csv.lines().nth(4).unwrap().ends_with("NA"));
    }

    /// Straight-line reimplementations used as oracles.
    fn naive_loss(p: &[[f64; N_CLASSES]], y: &[usize]) -> f64 {
        let mut s = 0.0;
        for i in 0..y.len() {
            let mut q = p[i][y[i]];
            if q < 1e-15 {
                q = 1e-15;
            }
            if q > 1.0 - 1e-15 {
                q = 1.0 - 1e-15;
            }
            s += -q.ln();
        }
        s / y.len() as f64
    }

    fn naive_macro_f1(pred: &[usize], y: &[usize]) -> f64 {
        let mut total = 0.0;
        let mut k = 0;
        for c in 0..N_CLASSES {
            if !y.contains(&c) {
                continue;
            }
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fnn = 0.0;
            for i in 0..y.len() {
                if pred[i] == c && y[i] == c {
                    tp += 1.0;
                } else if pred[i] == c {
                    fp += 1.0;
                } else if y[i] == c {
                    fnn += 1.0;
                }
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = tp / (tp + fnn);
            total += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            k += 1;
        }
        total / k as f64
    }

    #[test]
    fn matches_naive_on_random_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(1..60);
            let classes = rng.random_range(1..=N_CLASSES);
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                let mut r = [0.0; N_CLASSES];
                for v in r.iter_mut() {
                    *v = rng.random::<f64>().powi(3);
                }
                let s: f64 = r.iter().sum();
                rows.push(r.map(|v| v / s));
            }
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let p = Array2::from_shape_fn((n, N_CLASSES), |(i, j)| rows[i][j]);
            assert!((log_loss(&p, &y).unwrap() - naive_loss(&rows, &y)).abs() <= 1e-12);
            assert!((macro_f1(&pred, &y).unwrap().macro_f1 - naive_macro_f1(&pred, &y)).abs() <= 1e-12);
            let cm = confusion(&pred, &y).unwrap();
            for i in 0..N_CLASSES {
                for j in 0..N_CLASSES {
                    let brute = (0..n).filter(|&t| y[t] == i && pred[t] == j).count();
                    assert_eq!(cm.counts[i][j], brute);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn permuting_classes_keeps_macro_f1(
            pairs in prop::collection::vec((0usize..N_CLASSES, 0usize..N_CLASSES), 1..80),
            perm in Just((0..N_CLASSES).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let a = macro_f1(&pred, &y).unwrap().macro_f1;
            let pp: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
            let py: Vec<usize> = y.iter().map(|&c| perm[c]).collect();
            let b = macro_f1(&pp, &py).unwrap().macro_f1;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn confusion_conserves_total(pairs in prop::collection::vec((0usize..N_CLASSES, 0usize..N_CLASSES), 0..80)) {
            let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let cm = confusion(&pred, &y).unwrap();
            prop_assert_eq!(cm.total(), pairs.len());
            for row in cm.normalized().into_iter().flatten() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn scores_are_bounded(pairs in prop::collection::vec((0usize..N_CLASSES, 0usize..N_CLASSES), 1..80)) {
            let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let r = macro_f1(&pred, &y).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.macro_f1));
            for c in &r.per_class {
                prop_assert!((0.0..=1.0).contains(&c.precision));
                prop_assert!((0.0..=1.0).contains(&c.recall));
                prop_assert!((0.0..=1.0).contains(&c.f1));
            }
        }
    }
}
