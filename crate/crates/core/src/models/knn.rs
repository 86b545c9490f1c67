use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelFamily};
use crate::features::Standardizer;
use crate::par;
use crate::N_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
    pub metric: Metric,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 5, metric: Metric::L2 }
    }
}

impl KnnParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k == 0 {
            return Err(ModelError::InvalidParameter {
                family: ModelFamily::Knn,
                name: "k",
                value: "0".into(),
            });
        }
        Ok(())
    }
}

/// Brute-force neighbor classifier over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub params: KnnParams,
    pub standardizer: Standardizer,
    pub train: Array2<f64>,
    pub labels: Vec<usize>,
}

impl KnnModel {
    pub fn fit(params: &KnnParams, x: &Array2<f64>, y: &[usize]) -> Result<Self, ModelError> {
        params.validate()?;
        if params.k > x.nrows() {
            return Err(ModelError::InvalidK { k: params.k, n: x.nrows() });
        }
        let standardizer = Standardizer::fit(x);
        Ok(KnnModel {
            params: *params,
            train: standardizer.transform(x),
            standardizer,
            labels: y.to_vec(),
        })
    }

    /// Indices of the k nearest training rows, ordered by (distance, row).
    pub fn neighbors(&self, query: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .train
            .outer_iter()
            .enumerate()
            .map(|(i, row)| {
                let dist = match self.params.metric {
                    Metric::L1 => row.iter().zip(query).map(|(a, b)| (a - b).abs()).sum(),
                    Metric::L2 => row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                };
                (dist, i)
            })
            .collect();
        let k = self.params.k;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_unstable_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Array2<f64> {
        let z = self.standardizer.transform(x);
        let rows = par::map_range(z.nrows(), |i| {
            let q = z.row(i).to_vec();
            let mut p = [0.0; N_CLASSES];
            for j in self.neighbors(&q) {
                p[self.labels[j]] += 1.0;
            }
            p.map(|c| c / self.params.k as f64)
        });
        let mut out = Array2::zeros((x.nrows(), N_CLASSES));
        for (i, p) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&p));
        }
        out
    }
}
