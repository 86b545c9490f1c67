//! Exchange format for class probabilities produced outside this crate:
//! one line per record, `record_id` followed by nine tab-separated
//! probabilities in class-index order. `#` lines are comments.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;

use super::ModelError;
use crate::N_CLASSES;

const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalPredictions {
    pub record_ids: Vec<u64>,
    pub probs: Array2<f64>,
}

impl ExternalPredictions {
    /// Rows reordered to follow `ids`; every id must be present.
    pub fn align(&self, ids: &[u64]) -> Result<Array2<f64>, ModelError> {
        let at: HashMap<u64, usize> = self.record_ids.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let mut out = Array2::zeros((ids.len(), N_CLASSES));
        for (i, id) in ids.iter().enumerate() {
            let j = *at
                .get(id)
                .ok_or_else(|| ModelError::Bridge(format!("no prediction for record {id}")))?;
            out.row_mut(i).assign(&self.probs.row(j));
        }
        Ok(out)
    }
}

pub fn read_external_predictions(path: impl AsRef<Path>) -> Result<ExternalPredictions, crate::Error> {
    let path = path.as_ref();
    let text = std::fs::read(path).map_err(|e| crate::Error::io(path, e))?;
    Ok(parse_predictions(&text[..])?)
}

pub(crate) fn parse_predictions(input: impl BufRead) -> Result<ExternalPredictions, ModelError> {
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| ModelError::Bridge(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: &str| ModelError::Bridge(format!("line {}: {m}", n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != N_CLASSES + 1 {
            return Err(err(&format!("expected {} columns, found {}", N_CLASSES + 1, cols.len())));
        }
        ids.push(cols[0].parse::<u64>().map_err(|_| err("bad record id"))?);
        let mut sum = 0.0;
        for c in &cols[1..] {
            let p: f64 = c.parse().map_err(|_| err("bad probability"))?;
            if !(p.is_finite() && p >= 0.0) {
                return Err(err("probability must be finite and non-negative"));
            }
            sum += p;
            values.push(p);
        }
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(err(&format!("probabilities sum to {sum}")));
        }
    }
    let n = ids.len();
    let probs = Array2::from_shape_vec((n, N_CLASSES), values).expect("row width checked");
    Ok(ExternalPredictions { record_ids: ids, probs })
}

/// Write probabilities in the bridge format.
pub fn write_predictions(
    path: impl AsRef<Path>,
    ids: &[u64],
    probs: &Array2<f64>,
    run_config_hash: &str,
) -> Result<(), crate::Error> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "# run_config_hash={run_config_hash}").map_err(io)?;
    for (id, row) in ids.iter().zip(probs.outer_iter()) {
        write!(w, "{id}").map_err(io)?;
        for p in row {
            write!(w, "\t{p}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_aligns() {
        let text = "# svm\n7\t1\t0\t0\t0\t0\t0\t0\t0\t0\n3\t0.5\t0.5\t0\t0\t0\t0\t0\t0\t0\n";
        let p = parse_predictions(text.as_bytes()).unwrap();
        assert_eq!(p.record_ids, vec![7, 3]);
        let a = p.align(&[3, 7]).unwrap();
        assert_eq!(a[[0, 1]], 0.5);
        assert_eq!(a[[1, 0]], 1.0);
        assert!(p.align(&[9]).is_err());
    }

    #[test]
    fn rejects_off_simplex_rows() {
        assert!(parse_predictions("1\t0.5\t0\t0\t0\t0\t0\t0\t0\t0\n".as_bytes()).is_err());
        assert!(parse_predictions("1\t-0.5\t1.5\t0\t0\t0\t0\t0\t0\t0\n".as_bytes()).is_err());
        assert!(parse_predictions("1\t1\t0\n".as_bytes()).is_err());
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        let mut probs = Array2::zeros((2, N_CLASSES));
        probs[[0, 2]] = 0.3;
        probs[[0, 4]] = 0.7;
        probs[[1, 8]] = 1.0;
        write_predictions(&path, &[10, 11], &probs, "h").unwrap();
        let back = read_external_predictions(&path).unwrap();
        assert_eq!(back.probs, probs);
    }
}
