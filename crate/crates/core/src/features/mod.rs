//! Check-in enrichment and feature-vector assembly.
//!
//! Every check-in becomes one fixed-width row laid out as
//!
//! ```text
//! [user | time | cell ordinal per (family, resolution) | distance, bearing | stats per (family, resolution)]
//! ```
//!
//! where each stats block holds the enabled counts (unique venues, unique
//! users, check-ins) followed by a seen-in-training flag. All per-cell and
//! per-user quantities come from the training records passed to
//! [`FeaturePipeline::fit`].

mod encode;
mod pipeline;
mod standardize;
mod stats;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{GridFamily, ResolutionLadder};

pub use encode::{encode_timestamp, encode_user, relative_location, UserProfile, TIME_WIDTH, USER_WIDTH};
pub use pipeline::{FeatureMatrix, FeaturePipeline, FeatureVector};
pub use standardize::Standardizer;
pub use stats::{compute_grid_stats, CellStats, GridStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("no training records")]
    EmptyTraining,
    #[error("feature spec needs at least one grid family")]
    NoFamilies,
    #[error("resolution {requested} is finer than the dataset's anonymization resolution {anonymized}")]
    TooFine { requested: u8, anonymized: u8 },
    #[error("record cell {0} does not match the dataset resolution")]
    CellResolution(String),
    #[error("assembled {got} values, spec requires {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite feature {column} for record {record_id}")]
    NonFinite { column: String, record_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelativeFlags {
    pub distance: bool,
    pub bearing: bool,
}

impl RelativeFlags {
    pub fn count(&self) -> usize {
        usize::from(self.distance) + usize::from(self.bearing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatFlags {
    pub poi: bool,
    pub users: bool,
    pub checkins: bool,
}

impl StatFlags {
    pub fn count(&self) -> usize {
        usize::from(self.poi) + usize::from(self.users) + usize::from(self.checkins)
    }

    pub fn any(&self) -> bool {
        self.count() > 0
    }

    pub fn none() -> Self {
        StatFlags {
            poi: false,
            users: false,
            checkins: false,
        }
    }
}

/// Which feature groups are produced, at which grids and scales.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub families: Vec<GridFamily>,
    pub ladder: ResolutionLadder,
    pub user: bool,
    pub time: bool,
    pub cells: bool,
    pub relative: RelativeFlags,
    pub stats: StatFlags,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            families: vec![GridFamily::Geohash, GridFamily::OffsetGeohash],
            ladder: ResolutionLadder::default(),
            user: true,
            time: true,
            cells: true,
            relative: RelativeFlags {
                distance: true,
                bearing: true,
            },
            stats: StatFlags {
                poi: true,
                users: true,
                checkins: true,
            },
        }
    }
}

impl FeatureSpec {
    /// Number of (family, resolution) grids.
    pub fn grid_count(&self) -> usize {
        self.families.len() * self.ladder.len()
    }

    /// Width of one grid's statistics block (enabled counts plus seen flag).
    pub fn stats_block_width(&self) -> usize {
        if self.stats.any() {
            self.stats.count() + 1
        } else {
            0
        }
    }

    pub fn dimension(&self) -> usize {
        let mut d = 0;
        if self.user {
            d += USER_WIDTH;
        }
        if self.time {
            d += TIME_WIDTH;
        }
        if self.cells {
            d += self.grid_count();
        }
        d += self.relative.count();
        d + self.grid_count() * self.stats_block_width()
    }

    /// (family, resolution) pairs, families outermost.
    pub fn grids(&self) -> Vec<(GridFamily, u8)> {
        self.families
            .iter()
            .flat_map(|&f| self.ladder.resolutions().iter().map(move |&r| (f, r)))
            .collect()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut cols = Vec::with_capacity(self.dimension());
        if self.user {
            cols.extend(["user_log_count", "user_modal_activity"].map(String::from));
        }
        if self.time {
            cols.extend(["hour_sin", "hour_cos", "dow_sin", "dow_cos", "weekend"].map(String::from));
        }
        let grids = self.grids();
        if self.cells {
            cols.extend(grids.iter().map(|(f, r)| format!("cell_{f}_r{r}")));
        }
        if self.relative.distance {
            cols.push("distance_km".into());
        }
        if self.relative.bearing {
            cols.push("bearing_deg".into());
        }
        if self.stats.any() {
            for (f, r) in &grids {
                let flags = [
                    (self.stats.poi, "poi"),
                    (self.stats.users, "users"),
                    (self.stats.checkins, "checkins"),
                    (true, "seen"),
                ];
                for (on, name) in flags {
                    if on {
                        cols.push(format!("psi_{f}_r{r}_{name}"));
                    }
                }
            }
        }
        cols
    }

    /// Short stable hash of the spec, stored with trained models.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.families.is_empty() {
            return Err(FeatureError::NoFamilies);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Count columns group by group, independently of `dimension()`.
    fn count_dims(spec: &FeatureSpec) -> usize {
        let grids = spec.families.len() * spec.ladder.resolutions().len();
        let mut d = 0;
        d += if spec.user { 2 } else { 0 };
        d += if spec.time { 5 } else { 0 };
        d += if spec.cells { grids } else { 0 };
        d += [spec.relative.distance, spec.relative.bearing].iter().filter(|b| **b).count();
        let stats = [spec.stats.poi, spec.stats.users, spec.stats.checkins].iter().filter(|b| **b).count();
        if stats > 0 {
            d += grids * (stats + 1);
        }
        d
    }

    #[test]
    fn default_dimension_is_79() {
        let s = FeatureSpec::default();
        assert_eq!(count_dims(&s), 79);
        assert_eq!(s.dimension(), 79);
        assert_eq!(s.column_names().len(), 79);
    }

    #[test]
    fn stats_off_shrinks_by_block() {
        let mut s = FeatureSpec::default();
        s.stats = StatFlags::none();
        assert_eq!(s.dimension(), 79 - 14 * 4);
        assert_eq!(s.dimension(), count_dims(&s));
    }

    #[test]
    fn every_flag_combination_counts_consistently() {
        for mask in 0u32..256 {
            let b = |i: u32| mask & (1 << i) != 0;
            let mut s = FeatureSpec {
                user: b(0),
                time: b(1),
                cells: b(2),
                relative: RelativeFlags { distance: b(3), bearing: b(4) },
                stats: StatFlags { poi: b(5), users: b(6), checkins: b(7) },
                ..FeatureSpec::default()
            };
            for fams in [vec![GridFamily::Geohash], vec![GridFamily::Geohash, GridFamily::OffsetGeohash]] {
                s.families = fams;
                assert_eq!(s.dimension(), count_dims(&s));
                let cols = s.column_names();
                assert_eq!(cols.len(), s.dimension());
                let unique: std::collections::HashSet<_> = cols.iter().collect();
                assert_eq!(unique.len(), cols.len());
            }
        }
    }

    #[test]
    fn fingerprint_tracks_spec() {
        let a = FeatureSpec::default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.relative.bearing = false;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
