use std::collections::HashMap;
use std::f64::consts::TAU;

use chrono::{Datelike, NaiveDateTime, Timelike};

use crate::geodesy::{bearing_or_zero, haversine_distance, EarthModel, GeoPoint};
use crate::grid::{CellId, GridError, GridSystem};
use crate::ingest::CheckIn;

pub const USER_WIDTH: usize = 2;
pub const TIME_WIDTH: usize = 5;

/// `[sin, cos]` of hour-of-day, `[sin, cos]` of day-of-week (Monday = 0),
/// weekend flag.
pub fn encode_timestamp(t: NaiveDateTime) -> [f64; TIME_WIDTH] {
    let hours = f64::from(t.hour()) + f64::from(t.minute()) / 60.0 + f64::from(t.second()) / 3600.0;
    let h = TAU * hours / 24.0;
    let dow = t.weekday().num_days_from_monday();
    let d = TAU * f64::from(dow) / 7.0;
    let weekend = if dow >= 5 { 1.0 } else { 0.0 };
    [h.sin(), h.cos(), d.sin(), d.cos(), weekend]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserProfile {
    pub checkins: usize,
    pub modal_activity: usize,
}

pub(crate) fn user_profiles(train: &[CheckIn]) -> HashMap<String, UserProfile> {
    let mut counts: HashMap<&str, [usize; crate::N_CLASSES]> = HashMap::new();
    for r in train {
        counts.entry(&r.user_id).or_default()[r.activity.index()] += 1;
    }
    counts
        .into_iter()
        .map(|(u, c)| {
            let total = c.iter().sum();
            let modal = argmax_first(&c);
            (
                u.to_string(),
                UserProfile {
                    checkins: total,
                    modal_activity: modal,
                },
            )
        })
        .collect()
}

fn argmax_first(c: &[usize]) -> usize {
    let mut best = 0;
    for (i, &v) in c.iter().enumerate() {
        if v > c[best] {
            best = i;
        }
    }
    best
}

/// `(ln(1 + training check-ins), modal activity index)`, or `(0, -1)` for a
/// user with no training records.
pub fn encode_user(profile: Option<&UserProfile>) -> [f64; USER_WIDTH] {
    match profile {
        Some(p) if p.checkins > 0 => [(p.checkins as f64).ln_1p(), p.modal_activity as f64],
        _ => [0.0, -1.0],
    }
}

/// Distance (km) and bearing (degrees) from the cell center towards the
/// city center. A cell centered exactly on the city gives bearing 0.
pub fn relative_location(
    grids: &GridSystem,
    cell: CellId,
    center: GeoPoint,
    earth: EarthModel,
) -> Result<(f64, f64), GridError> {
    let c = grids.decode(cell)?.center();
    Ok((haversine_distance(c, center, earth), bearing_or_zero(c, center)))
}
