//! Per-cell aggregation of predicted and true activities as GeoJSON.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};

use super::EvalError;
use crate::grid::{CellId, GridSystem};
use crate::ingest::{Activity, CheckIn};
use crate::N_CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct CellTally {
    pub cell: CellId,
    pub predicted: [usize; N_CLASSES],
    pub truth: [usize; N_CLASSES],
}

impl CellTally {
    pub fn records(&self) -> usize {
        self.truth.iter().sum()
    }
}

/// Most frequent class; ties go to the lowest index.
pub fn modal(counts: &[usize; N_CLASSES]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapExport {
    pub inferred: Value,
    pub truth: Value,
    pub cells: Vec<CellTally>,
    /// Share of cells whose modal predicted and modal true activity agree.
    pub modal_agreement: f64,
}

impl MapExport {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), crate::Error> {
        let dir = dir.as_ref();
        for (name, doc) in [("inferred.geojson", &self.inferred), ("truth.geojson", &self.truth)] {
            let path = dir.join(name);
            let body = serde_json::to_string_pretty(doc)? + "\n";
            std::fs::write(&path, body).map_err(|e| crate::Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Group records into Geohash cells at `resolution` and emit one polygon
/// per cell, once with predicted and once with true activity counts.
pub fn export_geojson(
    records: &[CheckIn],
    predictions: &[usize],
    resolution: u8,
    grids: &GridSystem,
    run_config_hash: &str,
) -> Result<MapExport, crate::Error> {
    if records.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            what: "records vs predictions",
            left: records.len(),
            right: predictions.len(),
        }
        .into());
    }
    let mut tallies: BTreeMap<CellId, CellTally> = BTreeMap::new();
    for (r, &p) in records.iter().zip(predictions) {
        if p >= N_CLASSES {
            return Err(EvalError::Label(p).into());
        }
        let cell = r.cell.truncate(resolution)?;
        let t = tallies.entry(cell).or_insert(CellTally {
            cell,
            predicted: [0; N_CLASSES],
            truth: [0; N_CLASSES],
        });
        t.predicted[p] += 1;
        t.truth[r.activity.index()] += 1;
    }
    let cells: Vec<CellTally> = tallies.into_values().collect();
    let mut inferred = Vec::with_capacity(cells.len());
    let mut truth = Vec::with_capacity(cells.len());
    let mut agree = 0usize;
    for t in &cells {
        let ring = ring(grids, t.cell)?;
        let (mp, mt) = (modal(&t.predicted), modal(&t.truth));
        agree += usize::from(mp == mt);
        let feature = |counts: &[usize; N_CLASSES], m: usize| {
            let by_name: BTreeMap<&str, usize> = Activity::ALL.iter().map(|a| (a.name(), counts[a.index()])).collect();
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring.clone()]},
                "properties": {
                    "cell": t.cell.to_string(),
                    "records": t.records(),
                    "modal_activity": Activity::ALL[m].name(),
                    "modal_index": m,
                    "counts": by_name,
                    "agrees": mp == mt,
                },
            })
        };
        inferred.push(feature(&t.predicted, mp));
        truth.push(feature(&t.truth, mt));
    }
    let rate = if cells.is_empty() {
        0.0
    } else {
        agree as f64 / cells.len() as f64
    };
    let collection = |features: Vec<Value>, kind: &str| {
        json!({
            "type": "FeatureCollection",
            "name": kind,
            "run_config_hash": run_config_hash,
            "resolution": resolution,
            "modal_agreement": rate,
            "features": features,
        })
    };
    Ok(MapExport {
        inferred: collection(inferred, "inferred"),
        truth: collection(truth, "truth"),
        cells,
        modal_agreement: rate,
    })
}

/// Closed counter-clockwise ring of the cell's bounding box, `[lon, lat]`.
fn ring(grids: &GridSystem, cell: CellId) -> Result<Vec<[f64; 2]>, crate::Error> {
    let b = grids.decode(cell)?;
    Ok(vec![
        [b.lon_min, b.lat_min],
        [b.lon_max, b.lat_min],
        [b.lon_max, b.lat_max],
        [b.lon_min, b.lat_max],
        [b.lon_min, b.lat_min],
    ])
}

/// Structural checks for a polygon FeatureCollection: closed rings of at
/// least four positions, counter-clockwise exteriors, `[lon, lat]` in range.
pub fn validate_geojson(doc: &Value) -> Result<(), EvalError> {
    let bad = |m: String| Err(EvalError::GeoJson(m));
    if doc["type"] != "FeatureCollection" {
        return bad("top level is not a FeatureCollection".into());
    }
    let Some(features) = doc["features"].as_array() else {
        return bad("missing features array".into());
    };
    for (i, f) in features.iter().enumerate() {
        if f["type"] != "Feature" || !f["properties"].is_object() {
            return bad(format!("feature {i} is malformed"));
        }
        if f["geometry"]["type"] != "Polygon" {
            return bad(format!("feature {i} is not a polygon"));
        }
        let Some(rings) = f["geometry"]["coordinates"].as_array() else {
            return bad(format!("feature {i} has no coordinates"));
        };
        for (k, r) in rings.iter().enumerate() {
            let pts: Option<Vec<(f64, f64)>> = r.as_array().and_then(|pts| {
                pts.iter()
                    .map(|p| match p.as_array().map(Vec::as_slice) {
                        Some([lon, lat]) => Some((lon.as_f64()?, lat.as_f64()?)),
                        _ => None,
                    })
                    .collect()
            });
            let Some(pts) = pts else {
                return bad(format!("feature {i} ring {k} has malformed positions"));
            };
            if pts.len() < 4 || pts.first() != pts.last() {
                return bad(format!("feature {i} ring {k} is not closed"));
            }
            if pts.iter().any(|&(lon, lat)| !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat)) {
                return bad(format!("feature {i} ring {k} leaves lon/lat range"));
            }
            let area2: f64 = pts.windows(2).map(|w| w[0].0 * w[1].1 - w[1].0 * w[0].1).sum();
            // exterior counter-clockwise, holes clockwise
            if (k == 0) != (area2 > 0.0) {
                return bad(format!("feature {i} ring {k} has the wrong orientation"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDateTime;
    use rand::{Rng, SeedableRng};

    fn rec(id: u64, cell: &str, activity: Activity) -> CheckIn {
        CheckIn {
            record_id: id,
            user_id: "u".into(),
            venue_id: "v".into(),
            cell: format!("gh:{}:{cell}", cell.len()).parse().unwrap(),
            local_time: NaiveDateTime::parse_from_str("2012-04-03 12:00:00", "%Y-%m-%d %H:%M:%S").unwrap(),
            activity,
        }
    }

    #[test]
    fn single_record_single_cell() {
        let g = GridSystem::default();
        let r = [rec(0, "u4pruyd", Activity::Residence)];
        let m = export_geojson(&r, &[Activity::Food.index()], 7, &g, "h").unwrap();
        let f = &m.inferred["features"][0];
        assert_eq!(m.inferred["features"].as_array().unwrap().len(), 1);
        assert_eq!(f["properties"]["modal_activity"], Activity::Food.name());
        assert_eq!(m.truth["features"][0]["properties"]["modal_activity"], Activity::Residence.name());
        assert_eq!(m.modal_agreement, 0.0);
        validate_geojson(&m.inferred).unwrap();
        validate_geojson(&m.truth).unwrap();
    }

    #[test]
    fn ring_is_the_decoded_box() {
        let g = GridSystem::default();
        let r = [rec(0, "u4pruydqqvj", Activity::Food)];
        let m = export_geojson(&r, &[2], 5, &g, "h").unwrap();
        let b = g.decode("gh:5:u4pru".parse().unwrap()).unwrap();
        let ring = &m.inferred["features"][0]["geometry"]["coordinates"][0];
        assert_eq!(ring[0], json!([b.lon_min, b.lat_min]));
        assert_eq!(ring[2], json!([b.lon_max, b.lat_max]));
        assert_eq!(ring[0], ring[4]);
    }

    #[test]
    fn modal_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cells = ["xn76urx", "xn76ury", "xn76urz", "xn77000"];
        let recs: Vec<CheckIn> = (0..500)
            .map(|i| {
                let a = Activity::ALL[rng.random_range(0..4)];
                rec(i, cells[rng.random_range(0..cells.len())], a)
            })
            .collect();
        let preds: Vec<usize> = (0..500).map(|_| rng.random_range(0..4)).collect();
        let m = export_geojson(&recs, &preds, 7, &GridSystem::default(), "h").unwrap();
        let mut agree = 0;
        for f in m.truth["features"].as_array().unwrap() {
            let cell = f["properties"]["cell"].as_str().unwrap();
            let mut best = (0usize, usize::MAX);
            for c in 0..N_CLASSES {
                let n = recs.iter().filter(|r| r.cell.to_string() == cell && r.activity.index() == c).count();
                if n > best.0 {
                    best = (n, c);
                }
            }
            assert_eq!(f["properties"]["modal_index"], best.1);
            let mut pbest = (0usize, usize::MAX);
            for c in 0..N_CLASSES {
                let n = (0..recs.len()).filter(|&i| recs[i].cell.to_string() == cell && preds[i] == c).count();
                if n > pbest.0 {
                    pbest = (n, c);
                }
            }
            agree += usize::from(pbest.1 == best.1);
        }
        assert_eq!(m.modal_agreement, agree as f64 / m.cells.len() as f64);
        let total: usize = m.cells.iter().map(CellTally::records).sum();
        assert_eq!(total, recs.len());
    }

    #[test]
    fn modal_ties_go_low() {
        let mut c = [0; N_CLASSES];
        c[3] = 2;
        c[1] = 2;
        assert_eq!(modal(&c), 1);
    }

    #[test]
    fn validator_rejects_bad_rings() {
        let poly = |ring: Value| json!({"type": "FeatureCollection", "features": [
            {"type": "Feature", "properties": {}, "geometry": {"type": "Polygon", "coordinates": [ring]}}]});
        assert!(validate_geojson(&poly(json!([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]))).is_ok());
        assert!(validate_geojson(&poly(json!([[0, 0], [0, 1], [1, 1], [1, 0], [0, 0]]))).is_err());
        assert!(validate_geojson(&poly(json!([[0, 0], [1, 0], [1, 1], [0, 1]]))).is_err());
        assert!(validate_geojson(&poly(json!([[0, 0], [1, 0], [0, 0]]))).is_err());
        assert!(validate_geojson(&json!({"type": "Feature"})).is_err());
    }
}
