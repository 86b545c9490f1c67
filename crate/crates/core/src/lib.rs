//! Offline-activity inference from grid-anonymized check-in records.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! - [`ingest`]: parse raw check-ins, assign cities, map venue categories onto
//!   the nine parent activities and replace coordinates by grid cells.
//! - [`features`]: per-cell grid statistics, relative location to the city
//!   center, time and user encodings, concatenated into fixed-width vectors.
//! - [`models`]: k-NN, softmax gradient-boosted trees and (regularized)
//!   multilayer perceptrons, all returning class probabilities.
//! - [`tuning`]: seeded random search with stratified k-fold cross validation.
//! - [`eval`]: log loss, macro-F1, confusion matrices, ablation runs and
//!   GeoJSON map export.
//!
//! [`geodesy`] and [`grid`] hold the spherical-earth and hierarchical grid
//! primitives everything else is built on.

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod geodesy;
pub mod grid;
pub mod ingest;
pub mod models;
pub mod par;
pub mod rng;
pub mod synth;
pub mod tuning;

pub use error::{Error, Result};
pub use geodesy::{EarthModel, GeoPoint};
pub use grid::{CellId, GridFamily, ResolutionLadder};
pub use ingest::{Activity, CheckIn, CityConfig, Dataset};

/// Number of parent activity classes.
pub const N_CLASSES: usize = 9;
