//! Raw check-in ingestion: parsing, city assignment, category mapping,
//! location anonymization and train/test splitting.

mod city;
mod dataset;
mod parse;
mod taxonomy;

use thiserror::Error;

pub use city::{assign_city, load_cities, parse_cities, CityConfig, DEFAULT_CITY_RADIUS_KM};
pub use dataset::{
    build_datasets, coarsen, read_dataset, split_dataset, write_dataset, write_summary,
    BuildReport, CheckIn, Dataset, DatasetHeader, IngestConfig, Split, SplitReport, Summary,
    DATASET_FORMAT,
};
pub use parse::{open_input, parse_checkins, parse_checkins_path, ParseReport, RawCheckIn};
pub use taxonomy::{Activity, ActivityTaxonomy, UnknownPolicy};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input contains no records")]
    Empty,
    #[error("{malformed} of {total} lines malformed, above the {tolerance} tolerance")]
    Quality {
        malformed: usize,
        total: usize,
        tolerance: f64,
    },
    #[error("unknown venue category {0:?}")]
    UnknownCategory(String),
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error("city config: {0}")]
    Cities(String),
    #[error("dataset file: {0}")]
    Format(String),
    #[error("test fraction must lie in (0, 1), got {0}")]
    Fraction(f64),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
