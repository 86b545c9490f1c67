//! Spherical-earth distance and bearing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius used throughout, in kilometres.
pub const DEFAULT_EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesyError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("earth radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("bearing is undefined between coincident points")]
    DegenerateBearing,
}

/// A point on the sphere in degrees. Longitude is kept in `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeodesyError> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeodesyError::InvalidCoordinate { lat, lon });
        }
        Ok(GeoPoint {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Wrap a longitude into `[-180, 180)`.
pub fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    radius_km: f64,
}

impl EarthModel {
    pub fn new(radius_km: f64) -> Result<Self, GeodesyError> {
        if !(radius_km.is_finite() && radius_km > 0.0) {
            return Err(GeodesyError::InvalidRadius(radius_km));
        }
        Ok(EarthModel { radius_km })
    }

    pub fn radius_km(&self) -> f64 {
        self.radius_km
    }
}

impl Default for EarthModel {
    fn default() -> Self {
        EarthModel {
            radius_km: DEFAULT_EARTH_RADIUS_KM,
        }
    }
}

/// Great-circle distance in kilometres (haversine form).
pub fn haversine_distance(a: GeoPoint, b: GeoPoint, earth: EarthModel) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let s1 = (dphi / 2.0).sin();
    let s2 = (dlambda / 2.0).sin();
    let h = (s1 * s1 + phi1.cos() * phi2.cos() * s2 * s2).clamp(0.0, 1.0);
    let c = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    earth.radius_km * c
}

/// Initial bearing from `from` towards `to`, in degrees within `[0, 360)`.
pub fn initial_bearing(from: GeoPoint, to: GeoPoint) -> Result<f64, GeodesyError> {
    if from == to {
        return Err(GeodesyError::DegenerateBearing);
    }
    let (phi1, phi2) = (from.lat.to_radians(), to.lat.to_radians());
    let dlambda = (to.lon - from.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    Ok(wrap_degrees(y.atan2(x).to_degrees()))
}

/// Bearing with the coincident-point case mapped to 0.
pub fn bearing_or_zero(from: GeoPoint, to: GeoPoint) -> f64 {
    initial_bearing(from, to).unwrap_or(0.0)
}

fn wrap_degrees(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}
