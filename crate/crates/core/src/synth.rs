//! Synthetic check-in generator for running the pipeline without the public
//! dump.
//!
//! Recipe, per city:
//!
//! 1. Each activity gets `hotspots` district centers drawn uniformly in a
//!    disk of `radius_km` around the city center.
//! 2. Venues draw an activity from the city's class mix. A venue sits at one
//!    of its activity's hotspots plus isotropic Gaussian scatter
//!    (`hotspot_sigma_km`); a share `background` of venues is placed
//!    uniformly in the disk instead. The venue's raw category is a random
//!    raw name of that activity from the taxonomy.
//! 3. Venue popularity is `1 / r^popularity_exponent` for a random rank
//!    `r`, so a few venues collect many check-ins and many are seen once.
//! 4. Users have a Zipf-like activity level and a preference over
//!    activities (a random class-mix tilt).
//! 5. A check-in picks a user, a uniform day in April 2012 to February 2013
//!    and a uniform local hour, then an activity with weight proportional to
//!    the user's preference times the activity's daily profile at that hour
//!    (profiles differ on weekends), then a venue of that activity by
//!    popularity.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::geodesy::GeoPoint;
use crate::ingest::{Activity, ActivityTaxonomy, CityConfig, RawCheckIn};
use crate::rng::derive_rng;
use crate::N_CLASSES;

const KM_PER_DEGREE: f64 = 111.195;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub checkins: usize,
    pub venues: usize,
    pub users: usize,
    pub radius_km: f64,
    pub hotspots: usize,
    pub hotspot_sigma_km: f64,
    pub background: f64,
    pub popularity_exponent: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            checkins: 20_000,
            venues: 2_500,
            users: 600,
            radius_km: 15.0,
            hotspots: 5,
            hotspot_sigma_km: 0.6,
            background: 0.1,
            popularity_exponent: 0.9,
        }
    }
}

/// A city with the UTC offset used for its timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCity {
    pub city: CityConfig,
    pub tz_offset_minutes: i32,
}

/// The six study cities with their standard-time offsets.
pub fn default_cities() -> Vec<SynthCity> {
    let table = [
        ("Los Angeles", 34.0522, -118.2437, -420),
        ("Tokyo", 35.6762, 139.6503, 540),
        ("Mumbai", 19.0760, 72.8777, 330),
        ("Sydney", -33.8688, 151.2093, 600),
        ("Paris", 48.8566, 2.3522, 60),
        ("Milan", 45.4642, 9.1900, 60),
    ];
    table
        .into_iter()
        .map(|(name, lat, lon, tz)| SynthCity {
            city: CityConfig::new(name, GeoPoint::new(lat, lon).expect("valid center"), 35.0).expect("valid radius"),
            tz_offset_minutes: tz,
        })
        .collect()
}

/// Base class mix before the per-city tilt, in class-index order.
const CLASS_MIX: [f64; N_CLASSES] = [0.06, 0.05, 0.22, 0.08, 0.09, 0.13, 0.12, 0.13, 0.12];

/// Hours at which each activity peaks on weekdays and weekends.
fn peaks(a: Activity, weekend: bool) -> &'static [f64] {
    use Activity::*;
    match (a, weekend) {
        (ArtsEntertainment, false) => &[19.5],
        (ArtsEntertainment, true) => &[15.0, 20.0],
        (CollegeUniversity, false) => &[10.0, 14.0],
        (CollegeUniversity, true) => &[13.0],
        (Food, _) => &[12.5, 19.5],
        (NightlifeSpot, _) => &[22.5, 1.0],
        (OutdoorsRecreation, false) => &[7.0, 18.0],
        (OutdoorsRecreation, true) => &[11.0, 16.0],
        (ProfessionalOther, false) => &[9.0, 15.0],
        (ProfessionalOther, true) => &[11.0],
        (Residence, _) => &[7.5, 21.5],
        (ShopService, false) => &[17.5],
        (ShopService, true) => &[13.0, 16.0],
        (TravelTransport, false) => &[8.0, 18.5],
        (TravelTransport, true) => &[12.0],
    }
}

/// Unnormalized density of `hour` under the activity's profile.
fn hour_weight(a: Activity, weekend: bool, hour: f64) -> f64 {
    let bump: f64 = peaks(a, weekend)
        .iter()
        .map(|&p| {
            let d = (hour - p).abs();
            let d = d.min(24.0 - d);
            (-0.5 * (d / 1.8).powi(2)).exp()
        })
        .sum();
    0.05 + bump
}

fn offset(center: GeoPoint, east_km: f64, north_km: f64) -> GeoPoint {
    let lat = (center.lat() + north_km / KM_PER_DEGREE).clamp(-89.9, 89.9);
    let lon = center.lon() + east_km / (KM_PER_DEGREE * center.lat().to_radians().cos());
    GeoPoint::new(lat, crate::geodesy::normalize_lon(lon)).expect("offset stays on the globe")
}

fn in_disk(rng: &mut impl Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..std::f64::consts::TAU);
    (r * t.cos(), r * t.sin())
}

struct Venue {
    id: String,
    activity: Activity,
    category: String,
    point: GeoPoint,
}

/// Generate one city's raw check-ins. `first_line` numbers the records.
pub fn synth_city(
    city: &SynthCity,
    cfg: &SynthConfig,
    taxonomy: &ActivityTaxonomy,
    seed: u64,
    first_line: usize,
) -> Vec<RawCheckIn> {
    let mut rng = derive_rng(seed, &[]);
    let tag: String = city.city.name.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
    let center = city.city.center;

    // per-city tilt of the class mix
    let mix: Vec<f64> = CLASS_MIX.iter().map(|&w| w * rng.random_range(0.6..1.4)).collect();
    let class_dist = WeightedIndex::new(&mix).expect("positive weights");

    let hotspots: Vec<Vec<(f64, f64)>> = (0..N_CLASSES)
        .map(|_| (0..cfg.hotspots.max(1)).map(|_| in_disk(&mut rng, cfg.radius_km)).collect())
        .collect();
    let scatter = Normal::new(0.0, cfg.hotspot_sigma_km).expect("finite sigma");
    let names: Vec<Vec<&str>> = Activity::ALL.iter().map(|&a| taxonomy.raw_names(a)).collect();

    let mut venues = Vec::with_capacity(cfg.venues);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for v in 0..cfg.venues {
        let mut c = class_dist.sample(&mut rng);
        if names[c].is_empty() {
            c = Activity::Food.index();
        }
        let (e, n) = if rng.random::<f64>() < cfg.background {
            in_disk(&mut rng, cfg.radius_km)
        } else {
            let h = hotspots[c].choose(&mut rng).expect("at least one hotspot");
            (h.0 + scatter.sample(&mut rng), h.1 + scatter.sample(&mut rng))
        };
        by_class[c].push(venues.len());
        venues.push(Venue {
            id: format!("{tag}-v{v}"),
            activity: Activity::ALL[c],
            category: names[c].choose(&mut rng).expect("non-empty").to_string(),
            point: offset(center, e, n),
        });
    }
    let popularity: Vec<f64> = (0..venues.len())
        .map(|_| 1.0 / (rng.random_range(1..=venues.len().max(1)) as f64).powf(cfg.popularity_exponent))
        .collect();
    let venue_dist: Vec<Option<WeightedIndex<f64>>> = by_class
        .iter()
        .map(|idx| WeightedIndex::new(idx.iter().map(|&i| popularity[i])).ok())
        .collect();

    let user_activity: Vec<f64> = (1..=cfg.users.max(1)).map(|r| 1.0 / (r as f64).powf(0.8)).collect();
    let user_dist = WeightedIndex::new(&user_activity).expect("positive weights");
    let user_pref: Vec<Vec<f64>> = (0..cfg.users.max(1))
        .map(|_| mix.iter().map(|w| w * rng.random_range(0.2f64..1.8).powi(2)).collect())
        .collect();

    let start = NaiveDate::from_ymd_opt(2012, 4, 3).expect("valid date");
    let days = 320;
    let offset_min = Duration::minutes(i64::from(city.tz_offset_minutes));
    let mut out = Vec::with_capacity(cfg.checkins);
    while out.len() < cfg.checkins {
        let u = user_dist.sample(&mut rng);
        let day = start + Duration::days(rng.random_range(0..days));
        let weekend = day.weekday().number_from_monday() >= 6;
        let hour = rng.random_range(0.0..24.0);
        let w: Vec<f64> = (0..N_CLASSES)
            .map(|c| {
                let ok = venue_dist[c].is_some();
                if ok {
                    user_pref[u][c] * hour_weight(Activity::ALL[c], weekend, hour)
                } else {
                    0.0
                }
            })
            .collect();
        let c = WeightedIndex::new(&w).expect("some class has venues").sample(&mut rng);
        let v = &venues[by_class[c][venue_dist[c].as_ref().expect("checked").sample(&mut rng)]];
        let secs = (hour * 3600.0) as i64;
        let local = day.and_hms_opt(0, 0, 0).expect("midnight") + Duration::seconds(secs);
        out.push(RawCheckIn {
            line: first_line + out.len(),
            user_id: format!("{tag}-u{u}"),
            venue_id: v.id.clone(),
            category_id: format!("c{}", v.activity.index()),
            venue_category: v.category.clone(),
            point: v.point,
            tz_offset_minutes: city.tz_offset_minutes,
            utc_time: Utc.from_utc_datetime(&(local - offset_min)),
        });
    }
    out
}

/// All cities, each from its own seed stream, numbered consecutively.
pub fn synth_world(cities: &[SynthCity], cfg: &SynthConfig, taxonomy: &ActivityTaxonomy, seed: u64) -> Vec<RawCheckIn> {
    let mut all = Vec::new();
    for (i, c) in cities.iter().enumerate() {
        let first = all.len() + 1;
        all.extend(synth_city(c, cfg, taxonomy, crate::rng::derive_seed(seed, &[i as u64]), first));
    }
    all
}

/// Generated, anonymized and split datasets with the default ingest
/// settings, one per city.
pub fn synth_datasets(
    cities: &[SynthCity],
    cfg: &SynthConfig,
    seed: u64,
    test_fraction: f64,
) -> Result<Vec<crate::ingest::Dataset>, crate::Error> {
    let tax = ActivityTaxonomy::foursquare();
    let raw = synth_world(cities, cfg, &tax, seed);
    let cfgs: Vec<CityConfig> = cities.iter().map(|c| c.city.clone()).collect();
    let mut built = crate::ingest::build_datasets(&raw, &cfgs, &tax, &crate::ingest::IngestConfig::default())?;
    for d in built.datasets.iter_mut() {
        crate::ingest::split_dataset(d, test_fraction, seed)?;
    }
    Ok(built.datasets)
}

/// Write records in the tab-separated dump layout the parser reads.
pub fn write_fsq_tsv(path: impl AsRef<Path>, records: &[RawCheckIn]) -> Result<(), crate::Error> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}",
            r.user_id,
            r.venue_id,
            r.category_id,
            r.venue_category,
            r.point.lat(),
            r.point.lon(),
            r.tz_offset_minutes,
            r.utc_time.format("%a %b %d %H:%M:%S +0000 %Y"),
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `[[city]]` TOML for the given cities.
pub fn cities_toml(cities: &[SynthCity]) -> String {
    let mut s = String::new();
    for c in cities {
        s.push_str(&format!(
            "[[city]]\nname = \"{}\"\nlat = {}\nlon = {}\nradius_km = {}\n\n",
            c.city.name,
            c.city.center.lat(),
            c.city.center.lon(),
            c.city.radius_km
        ));
    }
    s
}
