use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::encode::{encode_timestamp, encode_user, relative_location, user_profiles, UserProfile};
use super::stats::{compute_grid_stats, project_cell, GridStats};
use super::{FeatureError, FeatureSpec};
use crate::geodesy::{EarthModel, GeoPoint};
use crate::grid::{CellId, GridFamily, GridSystem};
use crate::ingest::CheckIn;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: usize,
    pub record_id: u64,
}

/// Row-major design matrix with labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub record_ids: Vec<u64>,
    pub columns: Vec<String>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            x: self.x.select(ndarray::Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            record_ids: idx.iter().map(|&i| self.record_ids[i]).collect(),
            columns: self.columns.clone(),
        }
    }

    /// Headered CSV: `record_id, label, <columns...>`.
    pub fn write_csv(&self, path: impl AsRef<Path>, run_config_hash: &str) -> Result<(), crate::Error> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| crate::Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        let io = |e| crate::Error::io(path, e);
        writeln!(w, "# run_config_hash={run_config_hash}").map_err(io)?;
        writeln!(w, "record_id,label,{}", self.columns.join(",")).map_err(io)?;
        for (i, row) in self.x.outer_iter().enumerate() {
            write!(w, "{},{}", self.record_ids[i], self.y[i]).map_err(io)?;
            for v in row {
                write!(w, ",{v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

#[derive(Debug, Clone)]
struct GridLayer {
    family: GridFamily,
    resolution: u8,
    stats: GridStats,
    ordinals: HashMap<CellId, u32>,
}

/// Per-cell derived values shared by every record in that anonymized cell.
struct CellInfo {
    cells: Vec<CellId>,
    distance: f64,
    bearing: f64,
}

/// Feature extractor fitted on one training set.
#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    spec: FeatureSpec,
    center: GeoPoint,
    earth: EarthModel,
    grids: GridSystem,
    layers: Vec<GridLayer>,
    users: HashMap<String, UserProfile>,
}

impl FeaturePipeline {
    /// Fit grid statistics, cell vocabularies and user profiles on `train`.
    pub fn fit(
        spec: &FeatureSpec,
        train: &[CheckIn],
        city_center: GeoPoint,
        earth: EarthModel,
        grids: &GridSystem,
    ) -> Result<Self, crate::Error> {
        spec.validate()?;
        if train.is_empty() {
            return Err(FeatureError::EmptyTraining.into());
        }
        let mut layers = Vec::new();
        for (family, resolution) in spec.grids() {
            let stats = compute_grid_stats(grids, train, family, resolution)?;
            let mut vocab: Vec<CellId> = stats.cells.keys().copied().collect();
            vocab.sort();
            let ordinals = vocab.into_iter().enumerate().map(|(i, c)| (c, i as u32)).collect();
            layers.push(GridLayer {
                family,
                resolution,
                stats,
                ordinals,
            });
        }
        Ok(FeaturePipeline {
            spec: spec.clone(),
            center: city_center,
            earth,
            grids: grids.clone(),
            layers,
            users: user_profiles(train),
        })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    pub fn stats(&self, family: GridFamily, resolution: u8) -> Option<&GridStats> {
        self.layers
            .iter()
            .find(|l| l.family == family && l.resolution == resolution)
            .map(|l| &l.stats)
    }

    pub fn user_profile(&self, user: &str) -> Option<&UserProfile> {
        self.users.get(user)
    }

    fn cell_info(&self, anon: CellId) -> Result<CellInfo, crate::Error> {
        let cells = self
            .layers
            .iter()
            .map(|l| project_cell(&self.grids, anon, l.family, l.resolution))
            .collect::<Result<Vec<_>, _>>()?;
        let (distance, bearing) = relative_location(&self.grids, anon, self.center, self.earth)?;
        Ok(CellInfo {
            cells,
            distance,
            bearing,
        })
    }

    fn row(&self, r: &CheckIn, info: &CellInfo) -> Result<Vec<f64>, FeatureError> {
        let spec = &self.spec;
        let mut v = Vec::with_capacity(spec.dimension());
        if spec.user {
            v.extend(encode_user(self.users.get(&r.user_id)));
        }
        if spec.time {
            v.extend(encode_timestamp(r.local_time));
        }
        if spec.cells {
            for (l, c) in self.layers.iter().zip(&info.cells) {
                v.push(l.ordinals.get(c).map_or(-1.0, |&o| f64::from(o)));
            }
        }
        if spec.relative.distance {
            v.push(info.distance);
        }
        if spec.relative.bearing {
            v.push(info.bearing);
        }
        if spec.stats.any() {
            for (l, c) in self.layers.iter().zip(&info.cells) {
                let s = l.stats.get(c).copied().unwrap_or_default();
                if spec.stats.poi {
                    v.push(s.poi as f64);
                }
                if spec.stats.users {
                    v.push(s.users as f64);
                }
                if spec.stats.checkins {
                    v.push(s.checkins as f64);
                }
                v.push(if s.checkins > 0 { 1.0 } else { 0.0 });
            }
        }
        if v.len() != spec.dimension() {
            return Err(FeatureError::Dimension {
                expected: spec.dimension(),
                got: v.len(),
            });
        }
        if let Some(j) = v.iter().position(|x| !x.is_finite()) {
            return Err(FeatureError::NonFinite {
                column: spec.column_names()[j].clone(),
                record_id: r.record_id,
            });
        }
        Ok(v)
    }

    /// Feature vector for a single record.
    pub fn assemble(&self, r: &CheckIn) -> Result<FeatureVector, crate::Error> {
        let info = self.cell_info(r.cell)?;
        Ok(FeatureVector {
            values: self.row(r, &info)?,
            label: r.activity.index(),
            record_id: r.record_id,
        })
    }

    pub fn transform(&self, records: &[CheckIn]) -> Result<FeatureMatrix, crate::Error> {
        let mut distinct: Vec<CellId> = records.iter().map(|r| r.cell).collect();
        distinct.sort();
        distinct.dedup();
        let infos = par::map_slice(&distinct, |&c| self.cell_info(c));
        let mut by_cell = HashMap::with_capacity(distinct.len());
        for (c, info) in distinct.into_iter().zip(infos) {
            by_cell.insert(c, info?);
        }
        let d = self.spec.dimension();
        let rows = par::map_slice(records, |r| self.row(r, &by_cell[&r.cell]));
        let mut x = Array2::zeros((records.len(), d));
        for (i, row) in rows.into_iter().enumerate() {
            let row = row?;
            x.row_mut(i).iter_mut().zip(row).for_each(|(dst, v)| *dst = v);
        }
        Ok(FeatureMatrix {
            x,
            y: records.iter().map(|r| r.activity.index()).collect(),
            record_ids: records.iter().map(|r| r.record_id).collect(),
            columns: self.spec.column_names(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{RelativeFlags, StatFlags};
    use super::*;
    use crate::grid::ResolutionLadder;
    use crate::ingest::Activity;
    use chrono::NaiveDateTime;

    fn rec(id: u64, user: &str, venue: &str, cell: &str, a: Activity) -> CheckIn {
        CheckIn {
            record_id: id,
            user_id: user.into(),
            venue_id: venue.into(),
            cell: format!("gh:7:{cell}").parse().unwrap(),
            local_time: NaiveDateTime::parse_from_str("2012-04-07 18:30:00", "%Y-%m-%d %H:%M:%S").unwrap(),
            activity: a,
        }
    }

    fn corpus() -> Vec<CheckIn> {
        let cells = ["xn76urx", "xn76ury", "xn76gbc", "xn7h000", "xn76urx"];
        let acts = [Activity::Food, Activity::NightlifeSpot, Activity::ShopService, Activity::Food];
        (0..40)
            .map(|i| {
                rec(
                    i,
                    &format!("u{}", i % 6),
                    &format!("v{}", i % 11),
                    cells[i as usize % cells.len()],
                    acts[i as usize % acts.len()],
                )
            })
            .collect()
    }

    fn spec() -> FeatureSpec {
        FeatureSpec {
            ladder: ResolutionLadder::new(vec![4, 5, 6, 7]).unwrap(),
            ..FeatureSpec::default()
        }
    }

    fn center() -> GeoPoint {
        GeoPoint::new(35.6762, 139.6503).unwrap()
    }

    fn fit(spec: &FeatureSpec, train: &[CheckIn]) -> FeaturePipeline {
        FeaturePipeline::fit(spec, train, center(), EarthModel::default(), &GridSystem::default()).unwrap()
    }

    #[test]
    fn dimension_and_row_consistency() {
        let data = corpus();
        let s = spec();
        let p = fit(&s, &data[..30]);
        let m = p.transform(&data).unwrap();
        assert_eq!(m.dim(), s.dimension());
        assert_eq!(m.dim(), 7 + 8 + 2 + 8 * 4);
        for (i, r) in data.iter().enumerate() {
            let v = p.assemble(r).unwrap();
            assert_eq!(v.values.as_slice(), m.x.row(i).as_slice().unwrap());
        }
    }

    #[test]
    fn unseen_user_and_cell() {
        let data = corpus();
        let p = fit(&spec(), &data);
        let stranger = rec(99, "nobody", "v0", "xn76000", Activity::Food);
        let v = p.assemble(&stranger).unwrap().values;
        assert_eq!(&v[..2], &[0.0, -1.0]);
        let cols = spec().column_names();
        let at = |name: &str| v[cols.iter().position(|c| c == name).unwrap()];
        assert_eq!(at("cell_gh_r7"), -1.0);
        assert_eq!(at("psi_gh_r7_seen"), 0.0);
        assert_eq!(at("psi_gh_r7_checkins"), 0.0);
        assert_eq!(at("psi_gh_r4_seen"), 1.0);
    }

    #[test]
    fn statistics_use_training_only() {
        let data = corpus();
        let (train, test) = data.split_at(30);
        let p = fit(&spec(), train);
        let c: CellId = "gh:7:xn76urx".parse().unwrap();
        let in_train = train.iter().filter(|r| r.cell == c).count();
        assert!(in_train < data.iter().filter(|r| r.cell == c).count());
        assert_eq!(p.stats(GridFamily::Geohash, 7).unwrap().get(&c).unwrap().checkins, in_train);

        // moving one record from test into train changes the count by one
        let mut train2 = train.to_vec();
        let moved = test.iter().find(|r| r.cell == c).unwrap().clone();
        train2.push(moved);
        let p2 = fit(&spec(), &train2);
        assert_eq!(p2.stats(GridFamily::Geohash, 7).unwrap().get(&c).unwrap().checkins, in_train + 1);
    }

    #[test]
    fn disabling_a_group_drops_only_its_columns() {
        let data = corpus();
        let full_spec = spec();
        let full = fit(&full_spec, &data[..30]).transform(&data).unwrap();
        let variants = [
            FeatureSpec {
                relative: RelativeFlags {
                    distance: false,
                    bearing: true,
                },
                ..spec()
            },
            FeatureSpec {
                stats: StatFlags {
                    poi: true,
                    users: false,
                    checkins: true,
                },
                ..spec()
            },
            FeatureSpec {
                user: false,
                time: false,
                ..spec()
            },
            FeatureSpec {
                stats: StatFlags::none(),
                cells: false,
                ..spec()
            },
        ];
        for v in variants {
            let m = fit(&v, &data[..30]).transform(&data).unwrap();
            for (j, name) in m.columns.iter().enumerate() {
                let k = full.columns.iter().position(|c| c == name).unwrap();
                for i in 0..m.rows() {
                    assert_eq!(m.x[[i, j]].to_bits(), full.x[[i, k]].to_bits(), "{name}");
                }
            }
        }
    }

    #[test]
    fn too_fine_ladder_rejected() {
        let data = corpus();
        let s = FeatureSpec {
            ladder: ResolutionLadder::new(vec![7, 8]).unwrap(),
            ..FeatureSpec::default()
        };
        assert!(FeaturePipeline::fit(&s, &data, center(), EarthModel::default(), &GridSystem::default()).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let data = corpus();
        let m = fit(&spec(), &data).transform(&data[..3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        m.write_csv(&path, "abc").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# run_config_hash=abc");
        assert!(lines[1].starts_with("record_id,label,user_log_count"));
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[2].split(',').count(), m.dim() + 2);
    }
}
