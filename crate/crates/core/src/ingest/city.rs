use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::geodesy::{haversine_distance, EarthModel, GeoPoint};

pub const DEFAULT_CITY_RADIUS_KM: f64 = 35.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CityToml", into = "CityToml")]
pub struct CityConfig {
    pub name: String,
    pub center: GeoPoint,
    pub radius_km: f64,
}

impl CityConfig {
    pub fn new(name: impl Into<String>, center: GeoPoint, radius_km: f64) -> Result<Self, IngestError> {
        if !(radius_km.is_finite() && radius_km > 0.0) {
            return Err(IngestError::Cities(format!("radius must be positive, got {radius_km}")));
        }
        Ok(CityConfig {
            name: name.into(),
            center,
            radius_km,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CityToml {
    name: String,
    lat: f64,
    lon: f64,
    #[serde(default = "default_radius")]
    radius_km: f64,
}

fn default_radius() -> f64 {
    DEFAULT_CITY_RADIUS_KM
}

impl TryFrom<CityToml> for CityConfig {
    type Error = IngestError;
    fn try_from(c: CityToml) -> Result<Self, IngestError> {
        let center = GeoPoint::new(c.lat, c.lon).map_err(|e| IngestError::Cities(format!("{}: {e}", c.name)))?;
        CityConfig::new(c.name, center, c.radius_km)
    }
}

impl From<CityConfig> for CityToml {
    fn from(c: CityConfig) -> Self {
        CityToml {
            name: c.name,
            lat: c.center.lat(),
            lon: c.center.lon(),
            radius_km: c.radius_km,
        }
    }
}

#[derive(Deserialize)]
struct CitiesFile {
    city: Vec<CityConfig>,
}

/// Parse a `[[city]]` TOML table list.
pub fn parse_cities(text: &str) -> Result<Vec<CityConfig>, IngestError> {
    let f: CitiesFile = toml::from_str(text).map_err(|e| IngestError::Cities(e.to_string()))?;
    if f.city.is_empty() {
        return Err(IngestError::Cities("no cities configured".into()));
    }
    Ok(f.city)
}

pub fn load_cities(path: impl AsRef<Path>) -> Result<Vec<CityConfig>, IngestError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| IngestError::Cities(format!("{}: {e}", path.as_ref().display())))?;
    parse_cities(&text)
}

/// Index of the nearest city whose radius covers `point`; ties keep the
/// earlier entry.
pub fn assign_city(point: GeoPoint, cities: &[CityConfig], earth: EarthModel) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in cities.iter().enumerate() {
        let d = haversine_distance(point, c.center, earth);
        if d <= c.radius_km && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}
