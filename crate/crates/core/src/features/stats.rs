use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::grid::{CellId, GridFamily, GridSystem};
use crate::ingest::CheckIn;
use crate::par;

/// Counts for one cell, over training records only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellStats {
    pub poi: usize,
    pub users: usize,
    pub checkins: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridStats {
    pub family: Option<GridFamily>,
    pub resolution: u8,
    pub cells: HashMap<CellId, CellStats>,
}

impl GridStats {
    pub fn get(&self, cell: &CellId) -> Option<&CellStats> {
        self.cells.get(cell)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Map an anonymized Geohash cell onto `(family, resolution)`.
///
/// Geohash is truncated; other families encode the anonymized cell's center.
pub(crate) fn project_cell(
    grids: &GridSystem,
    anon: CellId,
    family: GridFamily,
    resolution: u8,
) -> Result<CellId, crate::Error> {
    if anon.family() != GridFamily::Geohash {
        return Err(FeatureError::CellResolution(anon.to_string()).into());
    }
    if resolution > anon.resolution() {
        return Err(FeatureError::TooFine {
            requested: resolution,
            anonymized: anon.resolution(),
        }
        .into());
    }
    match family {
        GridFamily::Geohash => Ok(anon.truncate(resolution)?),
        _ => {
            let center = grids.decode(anon)?.center();
            Ok(grids.encode(center, family, resolution)?)
        }
    }
}

type Partial<'a> = HashMap<CellId, (HashSet<&'a str>, HashSet<&'a str>, usize)>;

/// Per-cell unique venues, unique users and check-in counts.
pub fn compute_grid_stats(
    grids: &GridSystem,
    records: &[CheckIn],
    family: GridFamily,
    resolution: u8,
) -> Result<GridStats, crate::Error> {
    if records.is_empty() {
        return Err(FeatureError::EmptyTraining.into());
    }
    // Project each distinct anonymized cell once.
    let mut distinct: Vec<CellId> = records.iter().map(|r| r.cell).collect();
    distinct.sort();
    distinct.dedup();
    let projected = par::map_slice(&distinct, |&c| project_cell(grids, c, family, resolution));
    let mut lookup = HashMap::with_capacity(distinct.len());
    for (c, p) in distinct.into_iter().zip(projected) {
        lookup.insert(c, p?);
    }

    let partials: Vec<Partial> = par::map_blocks(records.len(), |range| {
        let mut m: Partial = HashMap::new();
        for r in &records[range] {
            let e = m.entry(lookup[&r.cell]).or_default();
            e.0.insert(r.venue_id.as_str());
            e.1.insert(r.user_id.as_str());
            e.2 += 1;
        }
        m
    });
    let mut merged: Partial = HashMap::new();
    for part in partials {
        for (cell, (v, u, n)) in part {
            let e = merged.entry(cell).or_default();
            e.0.extend(v);
            e.1.extend(u);
            e.2 += n;
        }
    }
    let cells = merged
        .into_iter()
        .map(|(c, (v, u, n))| {
            (
                c,
                CellStats {
                    poi: v.len(),
                    users: u.len(),
                    checkins: n,
                },
            )
        })
        .collect();
    Ok(GridStats {
        family: Some(family),
        resolution,
        cells,
    })
}
