use ndarray::Array2;
use rand::seq::SliceRandom;
use serde_json::Value;

use super::TuningError;
use crate::eval::log_loss;
use crate::features::{FeatureMatrix, FeaturePipeline, FeatureSpec};
use crate::geodesy::{EarthModel, GeoPoint};
use crate::grid::GridSystem;
use crate::ingest::CheckIn;
use crate::models::{self, ModelSpec};
use crate::rng::derive_rng;
use crate::N_CLASSES;

/// Anything that can be fitted on one fold and score the held-out rows.
pub trait Learner {
    fn fit_predict(&self, train: &FeatureMatrix, valid: &FeatureMatrix) -> Result<Array2<f64>, crate::Error>;

    /// Configuration recorded in the trial log.
    fn config(&self) -> Value;
}

impl Learner for ModelSpec {
    fn fit_predict(&self, train: &FeatureMatrix, valid: &FeatureMatrix) -> Result<Array2<f64>, crate::Error> {
        let m = models::fit(self, &train.x, &train.y)?;
        Ok(m.predict_proba(&valid.x)?)
    }

    fn config(&self) -> Value {
        serde_json::to_value(self).expect("model spec serializes")
    }
}

/// Fold index per row. Rows are shuffled within each class and dealt out
/// in turn, so every fold gets its share of every class and fold sizes
/// differ by at most one.
pub fn stratified_folds(y: &[usize], k: usize, seed: u64) -> Result<Vec<usize>, TuningError> {
    if k < 2 || y.len() < k {
        return Err(TuningError::Folds { k, rows: y.len() });
    }
    let mut rng = derive_rng(seed, &[0xf01d]);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES.max(y.iter().max().map_or(0, |m| m + 1))];
    for (i, &c) in y.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut fold = vec![0; y.len()];
    let mut next = 0;
    for idx in by_class.iter_mut() {
        idx.shuffle(&mut rng);
        for &i in idx.iter() {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone)]
pub struct Fold {
    pub train: FeatureMatrix,
    pub valid: FeatureMatrix,
}

/// Precomputed train/validation matrices for every fold.
#[derive(Debug, Clone)]
pub struct CvFolds {
    pub folds: Vec<Fold>,
    /// Folds whose held-out part lacks a class present in the data.
    pub warnings: Vec<String>,
}

fn split_indices(assign: &[usize], k: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..k)
        .map(|f| {
            let (va, tr): (Vec<usize>, Vec<usize>) = (0..assign.len()).partition(|&i| assign[i] == f);
            (tr, va)
        })
        .collect()
}

fn degeneracy(y: &[usize], assign: &[usize], k: usize) -> Vec<String> {
    let mut present = [false; N_CLASSES];
    y.iter().for_each(|&c| present[c] = true);
    let mut out = Vec::new();
    for f in 0..k {
        let mut seen = [false; N_CLASSES];
        y.iter().zip(assign).filter(|(_, &a)| a == f).for_each(|(&c, _)| seen[c] = true);
        let missing: Vec<String> = (0..N_CLASSES)
            .filter(|&c| present[c] && !seen[c])
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            out.push(format!("fold {f} holds out no record of class {}", missing.join(", ")));
        }
    }
    out
}

impl CvFolds {
    /// Folds over an already extracted matrix.
    pub fn from_matrix(m: &FeatureMatrix, k: usize, seed: u64) -> Result<Self, TuningError> {
        let assign = stratified_folds(&m.y, k, seed)?;
        let folds = split_indices(&assign, k)
            .into_iter()
            .map(|(tr, va)| Fold {
                train: m.select(&tr),
                valid: m.select(&va),
            })
            .collect();
        Ok(CvFolds {
            folds,
            warnings: degeneracy(&m.y, &assign, k),
        })
    }

    /// Folds over raw records; features are refitted on each fold's
    /// training part so held-out rows never feed grid statistics.
    pub fn from_records(
        records: &[CheckIn],
        spec: &FeatureSpec,
        center: GeoPoint,
        earth: EarthModel,
        grids: &GridSystem,
        k: usize,
        seed: u64,
    ) -> Result<Self, crate::Error> {
        let y: Vec<usize> = records.iter().map(|r| r.activity.index()).collect();
        let assign = stratified_folds(&y, k, seed)?;
        let mut folds = Vec::with_capacity(k);
        for (tr, va) in split_indices(&assign, k) {
            let tr: Vec<CheckIn> = tr.iter().map(|&i| records[i].clone()).collect();
            let va: Vec<CheckIn> = va.iter().map(|&i| records[i].clone()).collect();
            let pipe = FeaturePipeline::fit(spec, &tr, center, earth, grids)?;
            folds.push(Fold {
                train: pipe.transform(&tr)?,
                valid: pipe.transform(&va)?,
            });
        }
        Ok(CvFolds {
            folds,
            warnings: degeneracy(&y, &assign, k),
        })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }
}

/// Per-fold held-out log losses, or the first error.
pub fn cross_validate<L: Learner + ?Sized>(learner: &L, folds: &CvFolds) -> Result<Vec<f64>, crate::Error> {
    folds
        .folds
        .iter()
        .map(|f| {
            let p = learner.fit_predict(&f.train, &f.valid)?;
            Ok(log_loss(&p, &f.valid.y)?)
        })
        .collect()
}
