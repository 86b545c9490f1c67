use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::city::{assign_city, CityConfig};
use super::parse::RawCheckIn;
use super::taxonomy::{Activity, ActivityTaxonomy, UnknownPolicy};
use super::IngestError;
use crate::geodesy::EarthModel;
use crate::grid::{self, CellId, GridFamily};
use crate::par;

pub const DATASET_FORMAT: &str = "dataset.v1";

/// An anonymized check-in. Only the grid cell is kept, never coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckIn {
    pub record_id: u64,
    pub user_id: String,
    pub venue_id: String,
    pub cell: CellId,
    pub local_time: NaiveDateTime,
    pub activity: Activity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub checkins: usize,
    pub venues: usize,
    pub users: usize,
}

/// One city's anonymized records with their train/test assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub city: CityConfig,
    /// Geohash resolution the records were anonymized at.
    pub resolution: u8,
    pub records: Vec<CheckIn>,
    pub split: Vec<Split>,
    pub split_seed: Option<u64>,
    pub test_fraction: Option<f64>,
}

impl Dataset {
    pub fn new(city: CityConfig, resolution: u8, records: Vec<CheckIn>) -> Self {
        let split = vec![Split::Train; records.len()];
        Dataset {
            city,
            resolution,
            records,
            split,
            split_seed: None,
            test_fraction: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn summary(&self) -> Summary {
        summarize(&self.records)
    }

    pub fn subset(&self, which: Split) -> Vec<CheckIn> {
        self.records
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == which)
            .map(|(r, _)| r.clone())
            .collect()
    }

    pub fn train(&self) -> Vec<CheckIn> {
        self.subset(Split::Train)
    }

    pub fn test(&self) -> Vec<CheckIn> {
        self.subset(Split::Test)
    }

    /// Short digest of which record ids sit in the test split.
    pub fn split_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (r, s) in self.records.iter().zip(&self.split) {
            h.update(r.record_id.to_le_bytes());
            h.update([matches!(s, Split::Test) as u8]);
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub fn summarize(records: &[CheckIn]) -> Summary {
    let venues: HashSet<&str> = records.iter().map(|r| r.venue_id.as_str()).collect();
    let users: HashSet<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
    Summary {
        checkins: records.len(),
        venues: venues.len(),
        users: users.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub anonymization_resolution: u8,
    pub unknown_policy: UnknownPolicy,
    pub malformed_tolerance: f64,
    pub earth: EarthModel,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            anonymization_resolution: 10,
            unknown_policy: UnknownPolicy::Drop,
            malformed_tolerance: 0.01,
            earth: EarthModel::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    /// One dataset per configured city, in config order.
    pub datasets: Vec<Dataset>,
    pub unassigned: usize,
    pub dropped_unknown: usize,
}

/// Assign cities, map categories and anonymize locations.
pub fn build_datasets(
    raw: &[RawCheckIn],
    cities: &[CityConfig],
    taxonomy: &ActivityTaxonomy,
    cfg: &IngestConfig,
) -> Result<BuildReport, crate::Error> {
    if cities.is_empty() {
        return Err(IngestError::Cities("no cities configured".into()).into());
    }
    enum Outcome {
        Kept(usize, CheckIn),
        Unassigned,
        Unknown,
    }
    let res = cfg.anonymization_resolution;
    grid::encode(cities[0].center, GridFamily::Geohash, res)?;
    let outcomes = par::map_slice(raw, |r| -> Result<Outcome, IngestError> {
        let Some(ci) = assign_city(r.point, cities, cfg.earth) else {
            return Ok(Outcome::Unassigned);
        };
        let Some(activity) = taxonomy.map_category(&r.venue_category, cfg.unknown_policy)? else {
            return Ok(Outcome::Unknown);
        };
        let cell = grid::encode(r.point, GridFamily::Geohash, res).expect("resolution checked");
        Ok(Outcome::Kept(
            ci,
            CheckIn {
                record_id: r.line as u64,
                user_id: r.user_id.clone(),
                venue_id: r.venue_id.clone(),
                cell,
                local_time: r.local_time(),
                activity,
            },
        ))
    });
    let mut per_city: Vec<Vec<CheckIn>> = vec![Vec::new(); cities.len()];
    let (mut unassigned, mut dropped_unknown) = (0, 0);
    for o in outcomes {
        match o? {
            Outcome::Kept(ci, c) => per_city[ci].push(c),
            Outcome::Unassigned => unassigned += 1,
            Outcome::Unknown => dropped_unknown += 1,
        }
    }
    if dropped_unknown > 0 {
        log::warn!("dropped {dropped_unknown} records with unmapped categories");
    }
    let datasets = cities
        .iter()
        .zip(per_city)
        .map(|(c, recs)| {
            if recs.is_empty() {
                log::warn!("city {} has no records", c.name);
            }
            Dataset::new(c.clone(), res, recs)
        })
        .collect();
    Ok(BuildReport {
        datasets,
        unassigned,
        dropped_unknown,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitReport {
    pub test_count: usize,
    /// Classes with fewer than two records, kept entirely in training.
    pub unstratified: Vec<Activity>,
}

/// Stratified split: per-class test counts are apportioned by largest
/// remainder so the total equals `round(fraction * n)` and every class is
/// within one record of its exact share.
pub fn split_dataset(d: &mut Dataset, test_fraction: f64, seed: u64) -> Result<SplitReport, IngestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(IngestError::Fraction(test_fraction));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); Activity::ALL.len()];
    for (i, r) in d.records.iter().enumerate() {
        by_class[r.activity.index()].push(i);
    }
    let mut report = SplitReport::default();
    let mut quota = vec![0usize; by_class.len()];
    let mut remainders = Vec::new();
    let mut eligible_total = 0usize;
    for (c, idx) in by_class.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            log::warn!("class {} has {} record(s); not stratified", Activity::ALL[c], idx.len());
            report.unstratified.push(Activity::ALL[c]);
            continue;
        }
        eligible_total += idx.len();
        let exact = test_fraction * idx.len() as f64;
        quota[c] = exact.floor() as usize;
        remainders.push((c, exact - exact.floor()));
    }
    let target = (test_fraction * eligible_total as f64).round() as usize;
    let mut extra = target.saturating_sub(quota.iter().sum());
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (c, rem) in remainders {
        if extra == 0 || rem <= 0.0 {
            break;
        }
        quota[c] += 1;
        extra -= 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    d.split = vec![Split::Train; d.records.len()];
    for (c, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(quota[c]) {
            d.split[i] = Split::Test;
        }
    }
    d.split_seed = Some(seed);
    d.test_fraction = Some(test_fraction);
    report.test_count = quota.iter().sum();
    Ok(report)
}

/// Re-anonymize a dataset at a coarser Geohash resolution.
pub fn coarsen(d: &Dataset, resolution: u8) -> Result<Dataset, crate::Error> {
    let records = d
        .records
        .iter()
        .map(|r| {
            Ok(CheckIn {
                cell: r.cell.truncate(resolution)?,
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>, grid::GridError>>()?;
    Ok(Dataset {
        resolution,
        records,
        ..d.clone()
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub city: CityConfig,
    pub resolution: u8,
    pub split_seed: Option<u64>,
    pub test_fraction: Option<f64>,
    pub summary: Summary,
    pub run_config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Row {
    #[serde(flatten)]
    record: CheckIn,
    split: Split,
}

/// Write the line-delimited dataset: a JSON header line, then one JSON
/// record per line.
pub fn write_dataset(path: impl AsRef<Path>, d: &Dataset, run_config_hash: &str) -> Result<(), crate::Error> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| crate::Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = DatasetHeader {
        format: DATASET_FORMAT.to_string(),
        city: d.city.clone(),
        resolution: d.resolution,
        split_seed: d.split_seed,
        test_fraction: d.test_fraction,
        summary: d.summary(),
        run_config_hash: run_config_hash.to_string(),
    };
    let io = |e| crate::Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for (r, s) in d.records.iter().zip(&d.split) {
        let row = Row {
            record: r.clone(),
            split: *s,
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Dataset), crate::Error> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| crate::Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| IngestError::Format("empty file".into()))?
        .map_err(|e| crate::Error::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first)?;
    if header.format != DATASET_FORMAT {
        return Err(IngestError::Format(format!("unsupported format {:?}", header.format)).into());
    }
    let mut records = Vec::with_capacity(header.summary.checkins);
    let mut split = Vec::with_capacity(header.summary.checkins);
    for line in lines {
        let line = line.map_err(|e| crate::Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)?;
        records.push(row.record);
        split.push(row.split);
    }
    let d = Dataset {
        city: header.city.clone(),
        resolution: header.resolution,
        records,
        split,
        split_seed: header.split_seed,
        test_fraction: header.test_fraction,
    };
    if d.summary() != header.summary {
        return Err(IngestError::Format("summary does not match records".into()).into());
    }
    Ok((header, d))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    city: &'a str,
    #[serde(flatten)]
    summary: Summary,
}

/// JSON sidecar with the per-city check-in, venue and user counts.
pub fn write_summary(path: impl AsRef<Path>, datasets: &[Dataset], run_config_hash: &str) -> Result<(), crate::Error> {
    let rows: Vec<SummaryRow> = datasets
        .iter()
        .map(|d| SummaryRow {
            city: &d.city.name,
            summary: d.summary(),
        })
        .collect();
    let total = rows.iter().fold(Summary::default(), |a, r| Summary {
        checkins: a.checkins + r.summary.checkins,
        venues: a.venues + r.summary.venues,
        users: a.users + r.summary.users,
    });
    let doc = serde_json::json!({
        "run_config_hash": run_config_hash,
        "cities": rows,
        "total": total,
    });
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| crate::Error::io(path, e))
}
