//! Hierarchical grid families.
//!
//! Two families are native: standard Geohash and `OffsetGeohash`, a Geohash
//! whose cells are shifted by half a cell in both directions at every
//! resolution, so its boundaries never line up with the plain grid. A third
//! family is reserved for an externally supplied hexagonal index; it is only
//! usable through a [`GridSystem`] with a registered [`ExternalHexGrid`].
//!
//! Cells serialize as `family:resolution:code`, e.g. `gh:7:u4pruyd`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geodesy::{normalize_lon, GeoPoint};

pub const GEOHASH_MAX_RESOLUTION: u8 = 12;
const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("resolution {resolution} outside supported range 1..={max} for {family}")]
    Resolution { family: GridFamily, resolution: u8, max: u8 },
    #[error("malformed cell token {0:?}")]
    Parse(String),
    #[error("cell {0} has no parent")]
    NoParent(String),
    #[error("{0} cells are not nested across resolutions")]
    NotNested(GridFamily),
    #[error("no external hex grid provider registered")]
    NoExternalProvider,
    #[error("resolution ladder must be non-empty and strictly increasing")]
    Ladder,
    #[error("external grid: {0}")]
    External(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFamily {
    Geohash,
    OffsetGeohash,
    ExternalHex,
}

impl GridFamily {
    pub fn tag(self) -> &'static str {
        match self {
            GridFamily::Geohash => "gh",
            GridFamily::OffsetGeohash => "ogh",
            GridFamily::ExternalHex => "hex",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "gh" | "geohash" => Some(GridFamily::Geohash),
            "ogh" | "offset_geohash" => Some(GridFamily::OffsetGeohash),
            "hex" | "external_hex" => Some(GridFamily::ExternalHex),
            _ => None,
        }
    }
}

impl fmt::Display for GridFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Family-tagged cell identifier. `code` holds the packed Geohash bits
/// (5 per character) for the native families, or the provider's index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    family: GridFamily,
    resolution: u8,
    code: u64,
}

impl CellId {
    pub fn from_raw(family: GridFamily, resolution: u8, code: u64) -> Self {
        CellId {
            family,
            resolution,
            code,
        }
    }

    pub fn family(&self) -> GridFamily {
        self.family
    }

    pub fn resolution(&self) -> u8 {
        self.resolution
    }

    pub fn raw_code(&self) -> u64 {
        self.code
    }

    /// The code part of the token (Geohash characters or hex index).
    pub fn code(&self) -> String {
        match self.family {
            GridFamily::ExternalHex => format!("{:x}", self.code),
            _ => bits_to_geohash(self.code, self.resolution),
        }
    }

    /// Truncate a native cell to a coarser resolution.
    pub fn truncate(&self, resolution: u8) -> Result<CellId, GridError> {
        if self.family != GridFamily::Geohash {
            return Err(GridError::NotNested(self.family));
        }
        if resolution == 0 || resolution > self.resolution {
            return Err(GridError::Resolution {
                family: self.family,
                resolution,
                max: self.resolution,
            });
        }
        let shift = 5 * u32::from(self.resolution - resolution);
        Ok(CellId::from_raw(self.family, resolution, self.code >> shift))
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.family, self.resolution, self.code())
    }
}

impl FromStr for CellId {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GridError::Parse(s.to_string());
        let mut parts = s.splitn(3, ':');
        let family = parts.next().and_then(GridFamily::from_tag).ok_or_else(bad)?;
        let resolution: u8 = parts.next().and_then(|r| r.parse().ok()).ok_or_else(bad)?;
        let code = parts.next().ok_or_else(bad)?;
        match family {
            GridFamily::ExternalHex => {
                let code = u64::from_str_radix(code, 16).map_err(|_| bad())?;
                Ok(CellId::from_raw(family, resolution, code))
            }
            _ => {
                if code.len() != resolution as usize {
                    return Err(bad());
                }
                let bits = geohash_to_bits(code)?;
                Ok(CellId::from_raw(family, resolution, bits))
            }
        }
    }
}

impl Serialize for CellId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Axis-aligned cell extent in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl CellBox {
    pub fn center(&self) -> GeoPoint {
        let lat = (self.lat_min + self.lat_max) / 2.0;
        let lon = normalize_lon((self.lon_min + self.lon_max) / 2.0);
        GeoPoint::new(lat.clamp(-90.0, 90.0), lon).expect("box center is a valid point")
    }

    /// Containment test; longitude is compared modulo 360 so boxes that
    /// straddle the antimeridian work.
    pub fn contains(&self, p: GeoPoint) -> bool {
        if p.lat() < self.lat_min || p.lat() > self.lat_max {
            return false;
        }
        [-360.0, 0.0, 360.0]
            .iter()
            .any(|k| (self.lon_min..=self.lon_max).contains(&(p.lon() + k)))
    }

    pub fn contains_box(&self, other: &CellBox) -> bool {
        self.lat_min <= other.lat_min
            && self.lat_max >= other.lat_max
            && self.lon_min <= other.lon_min
            && self.lon_max >= other.lon_max
    }
}

/// Cell size (height, width) in degrees of a Geohash cell at `resolution`.
pub fn geohash_cell_size(resolution: u8) -> (f64, f64) {
    let bits = 5 * u32::from(resolution);
    let lon_bits = bits.div_ceil(2);
    let lat_bits = bits / 2;
    (180.0 / 2f64.powi(lat_bits as i32), 360.0 / 2f64.powi(lon_bits as i32))
}

fn check_geohash_resolution(family: GridFamily, resolution: u8) -> Result<(), GridError> {
    if resolution == 0 || resolution > GEOHASH_MAX_RESOLUTION {
        return Err(GridError::Resolution {
            family,
            resolution,
            max: GEOHASH_MAX_RESOLUTION,
        });
    }
    Ok(())
}

/// Interleaved bisection, longitude first; points on a midpoint go up.
fn geohash_bits(lat: f64, lon: f64, resolution: u8) -> u64 {
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut bits = 0u64;
    for i in 0..(5 * u32::from(resolution)) {
        bits <<= 1;
        if i % 2 == 0 {
            let mid = (lon_lo + lon_hi) / 2.0;
            if lon >= mid {
                bits |= 1;
                lon_lo = mid;
            } else {
                lon_hi = mid;
            }
        } else {
            let mid = (lat_lo + lat_hi) / 2.0;
            if lat >= mid {
                bits |= 1;
                lat_lo = mid;
            } else {
                lat_hi = mid;
            }
        }
    }
    bits
}

fn geohash_box(bits: u64, resolution: u8) -> CellBox {
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let n = 5 * u32::from(resolution);
    for i in 0..n {
        let bit = (bits >> (n - 1 - i)) & 1 == 1;
        if i % 2 == 0 {
            let mid = (lon_lo + lon_hi) / 2.0;
            if bit {
                lon_lo = mid
            } else {
                lon_hi = mid
            }
        } else {
            let mid = (lat_lo + lat_hi) / 2.0;
            if bit {
                lat_lo = mid
            } else {
                lat_hi = mid
            }
        }
    }
    CellBox {
        lat_min: lat_lo,
        lat_max: lat_hi,
        lon_min: lon_lo,
        lon_max: lon_hi,
    }
}

fn bits_to_geohash(bits: u64, resolution: u8) -> String {
    (0..resolution)
        .map(|i| {
            let shift = 5 * u32::from(resolution - 1 - i);
            BASE32[((bits >> shift) & 31) as usize] as char
        })
        .collect()
}

fn geohash_to_bits(code: &str) -> Result<u64, GridError> {
    if code.is_empty() || code.len() > GEOHASH_MAX_RESOLUTION as usize {
        return Err(GridError::Parse(code.to_string()));
    }
    code.bytes().try_fold(0u64, |acc, c| {
        let v = BASE32
            .iter()
            .position(|&b| b == c.to_ascii_lowercase())
            .ok_or_else(|| GridError::Parse(code.to_string()))?;
        Ok((acc << 5) | v as u64)
    })
}

/// Parse a bare Geohash string (no family prefix).
pub fn parse_geohash(code: &str) -> Result<CellId, GridError> {
    let bits = geohash_to_bits(code)?;
    Ok(CellId::from_raw(GridFamily::Geohash, code.len() as u8, bits))
}

/// Point translation applied before Geohash encoding for the offset family.
fn offset_translate(p: GeoPoint, resolution: u8) -> (f64, f64) {
    let (h, w) = geohash_cell_size(resolution);
    // the top row absorbs everything pushed past the pole
    let lat = (p.lat() + h / 2.0).min(90.0);
    (lat, normalize_lon(p.lon() + w / 2.0))
}

/// Encode a point into a native-family cell.
pub fn encode(point: GeoPoint, family: GridFamily, resolution: u8) -> Result<CellId, GridError> {
    match family {
        GridFamily::Geohash => {
            check_geohash_resolution(family, resolution)?;
            let bits = geohash_bits(point.lat(), point.lon(), resolution);
            Ok(CellId::from_raw(family, resolution, bits))
        }
        GridFamily::OffsetGeohash => {
            check_geohash_resolution(family, resolution)?;
            let (lat, lon) = offset_translate(point, resolution);
            let bits = geohash_bits(lat, lon, resolution);
            Ok(CellId::from_raw(family, resolution, bits))
        }
        GridFamily::ExternalHex => Err(GridError::NoExternalProvider),
    }
}

/// Bounding box of a native-family cell.
pub fn decode(cell: CellId) -> Result<CellBox, GridError> {
    match cell.family {
        GridFamily::Geohash => {
            check_geohash_resolution(cell.family, cell.resolution)?;
            Ok(geohash_box(cell.code, cell.resolution))
        }
        GridFamily::OffsetGeohash => {
            check_geohash_resolution(cell.family, cell.resolution)?;
            let (h, w) = geohash_cell_size(cell.resolution);
            let b = geohash_box(cell.code, cell.resolution);
            Ok(CellBox {
                lat_min: (b.lat_min - h / 2.0).max(-90.0),
                lat_max: if b.lat_max >= 90.0 { 90.0 } else { b.lat_max - h / 2.0 },
                lon_min: b.lon_min - w / 2.0,
                lon_max: b.lon_max - w / 2.0,
            })
        }
        GridFamily::ExternalHex => Err(GridError::NoExternalProvider),
    }
}

/// Parent cell one resolution up. Only Geohash cells nest.
pub fn parent(cell: CellId) -> Result<CellId, GridError> {
    match cell.family {
        GridFamily::Geohash => {
            if cell.resolution <= 1 {
                return Err(GridError::NoParent(cell.to_string()));
            }
            cell.truncate(cell.resolution - 1)
        }
        other => Err(GridError::NotNested(other)),
    }
}

/// Adapter point for an external hexagonal index (e.g. H3 bindings).
pub trait ExternalHexGrid: Send + Sync {
    fn max_resolution(&self) -> u8;
    fn encode(&self, point: GeoPoint, resolution: u8) -> Result<u64, GridError>;
    fn bounding_box(&self, index: u64) -> Result<CellBox, GridError>;
    fn parent(&self, index: u64, resolution: u8) -> Result<u64, GridError>;
}

/// Grid dispatcher holding an optional external provider.
#[derive(Clone, Default)]
pub struct GridSystem {
    external: Option<Arc<dyn ExternalHexGrid>>,
}

impl fmt::Debug for GridSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridSystem")
            .field("external", &self.external.is_some())
            .finish()
    }
}

impl GridSystem {
    pub fn with_external(provider: Arc<dyn ExternalHexGrid>) -> Self {
        GridSystem {
            external: Some(provider),
        }
    }

    fn provider(&self) -> Result<&dyn ExternalHexGrid, GridError> {
        self.external.as_deref().ok_or(GridError::NoExternalProvider)
    }

    pub fn encode(&self, point: GeoPoint, family: GridFamily, resolution: u8) -> Result<CellId, GridError> {
        match family {
            GridFamily::ExternalHex => {
                let prov = self.provider()?;
                if resolution > prov.max_resolution() {
                    return Err(GridError::Resolution {
                        family,
                        resolution,
                        max: prov.max_resolution(),
                    });
                }
                let index = prov.encode(point, resolution)?;
                Ok(CellId::from_raw(family, resolution, index))
            }
            _ => encode(point, family, resolution),
        }
    }

    pub fn decode(&self, cell: CellId) -> Result<CellBox, GridError> {
        match cell.family {
            GridFamily::ExternalHex => self.provider()?.bounding_box(cell.code),
            _ => decode(cell),
        }
    }

    pub fn parent(&self, cell: CellId) -> Result<CellId, GridError> {
        match cell.family {
            GridFamily::ExternalHex => {
                if cell.resolution == 0 {
                    return Err(GridError::NoParent(cell.to_string()));
                }
                let idx = self.provider()?.parent(cell.code, cell.resolution - 1)?;
                Ok(CellId::from_raw(cell.family, cell.resolution - 1, idx))
            }
            _ => parent(cell),
        }
    }
}

/// Strictly increasing list of resolutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ResolutionLadder(Vec<u8>);

impl ResolutionLadder {
    pub fn new(resolutions: Vec<u8>) -> Result<Self, GridError> {
        if resolutions.is_empty() || resolutions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::Ladder);
        }
        Ok(ResolutionLadder(resolutions))
    }

    pub fn single(resolution: u8) -> Self {
        ResolutionLadder(vec![resolution])
    }

    pub fn resolutions(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn finest(&self) -> u8 {
        *self.0.last().expect("ladder is non-empty")
    }

    pub fn coarsest(&self) -> u8 {
        self.0[0]
    }
}

impl Default for ResolutionLadder {
    /// Geohash precisions 4 through 10.
    fn default() -> Self {
        ResolutionLadder((4..=10).collect())
    }
}

impl TryFrom<Vec<u8>> for ResolutionLadder {
    type Error = GridError;
    fn try_from(v: Vec<u8>) -> Result<Self, GridError> {
        ResolutionLadder::new(v)
    }
}

impl From<ResolutionLadder> for Vec<u8> {
    fn from(l: ResolutionLadder) -> Self {
        l.0
    }
}

/// One cell per (family, resolution), families outermost.
pub fn cells_for_point(
    grids: &GridSystem,
    point: GeoPoint,
    families: &[GridFamily],
    ladder: &ResolutionLadder,
) -> Result<Vec<CellId>, GridError> {
    let mut out = Vec::with_capacity(families.len() * ladder.len());
    for &family in families {
        for &res in ladder.resolutions() {
            out.push(grids.encode(point, family, res)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn reference_vectors() {
        let c = encode(p(57.64911, 10.40744), GridFamily::Geohash, 11).unwrap();
        assert_eq!(c.code(), "u4pruydqqvj");
        assert_eq!(c.to_string(), "gh:11:u4pruydqqvj");
        assert_eq!(encode(p(0.0, 0.0), GridFamily::Geohash, 5).unwrap().code(), "s0000");
        assert_eq!(encode(p(-90.0, -180.0), GridFamily::Geohash, 4).unwrap().code(), "0000");
        assert_eq!(encode(p(90.0, 179.9999999), GridFamily::Geohash, 4).unwrap().code(), "zzzz");
    }

    #[test]
    fn decode_single_char_s() {
        // s = 11000: lon up, lat up, lon down, lat down, lon down
        let b = decode(parse_geohash("s").unwrap()).unwrap();
        assert_eq!((b.lat_min, b.lat_max, b.lon_min, b.lon_max), (0.0, 45.0, 0.0, 45.0));
    }

    #[test]
    fn illegal_characters_rejected() {
        assert!(parse_geohash("a").is_err());
        assert!(parse_geohash("u4pi").is_err());
        assert!(parse_geohash("").is_err());
        assert!("gh:3:u4".parse::<CellId>().is_err());
        assert!("zz:3:u4p".parse::<CellId>().is_err());
    }

    #[test]
    fn token_round_trip() {
        for t in ["gh:7:u4pruyd", "ogh:4:xn76", "hex:10:8a2a1072b59ffff"] {
            let c: CellId = t.parse().unwrap();
            assert_eq!(c.to_string(), t);
        }
        let c: CellId = serde_json::from_str("\"gh:5:u4pru\"").unwrap();
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"gh:5:u4pru\"");
    }

    #[test]
    fn parent_truncates() {
        let c: CellId = "gh:5:u4pru".parse().unwrap();
        assert_eq!(parent(c).unwrap().to_string(), "gh:4:u4pr");
        assert!(matches!(parent(parse_geohash("u").unwrap()), Err(GridError::NoParent(_))));
        let o = encode(p(1.0, 1.0), GridFamily::OffsetGeohash, 5).unwrap();
        assert!(matches!(parent(o), Err(GridError::NotNested(_))));
    }

    #[test]
    fn resolution_bounds() {
        assert!(encode(p(0.0, 0.0), GridFamily::Geohash, 0).is_err());
        assert!(encode(p(0.0, 0.0), GridFamily::Geohash, 13).is_err());
        assert!(encode(p(0.0, 0.0), GridFamily::OffsetGeohash, 12).is_ok());
        assert_eq!(
            encode(p(0.0, 0.0), GridFamily::ExternalHex, 5),
            Err(GridError::NoExternalProvider)
        );
    }

    #[test]
    fn ladder_validation() {
        assert!(ResolutionLadder::new(vec![]).is_err());
        assert!(ResolutionLadder::new(vec![4, 4]).is_err());
        assert!(ResolutionLadder::new(vec![5, 4]).is_err());
        let l = ResolutionLadder::default();
        assert_eq!(l.resolutions(), &[4, 5, 6, 7, 8, 9, 10]);
        assert!(serde_json::from_str::<ResolutionLadder>("[3,2]").is_err());
    }

    #[test]
    fn two_families_seven_scales() {
        let cells = cells_for_point(
            &GridSystem::default(),
            p(35.68, 139.76),
            &[GridFamily::Geohash, GridFamily::OffsetGeohash],
            &ResolutionLadder::default(),
        )
        .unwrap();
        assert_eq!(cells.len(), 14);
        let one = cells_for_point(
            &GridSystem::default(),
            p(35.68, 139.76),
            &[GridFamily::Geohash],
            &ResolutionLadder::single(6),
        )
        .unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn offset_cells_near_poles_and_antimeridian() {
        for &(lat, lon) in &[(89.99, 179.99), (-90.0, -180.0), (90.0, 0.0), (-89.999, 179.999)] {
            for r in 1..=12 {
                let c = encode(p(lat, lon), GridFamily::OffsetGeohash, r).unwrap();
                assert!(decode(c).unwrap().contains(p(lat, lon)), "{lat},{lon} r{r}");
            }
        }
    }

    struct FakeHex;
    impl ExternalHexGrid for FakeHex {
        fn max_resolution(&self) -> u8 {
            15
        }
        fn encode(&self, point: GeoPoint, resolution: u8) -> Result<u64, GridError> {
            Ok(geohash_bits(point.lat(), point.lon(), resolution.min(12)))
        }
        fn bounding_box(&self, _index: u64) -> Result<CellBox, GridError> {
            Err(GridError::External("unsupported".into()))
        }
        fn parent(&self, index: u64, _resolution: u8) -> Result<u64, GridError> {
            Ok(index >> 5)
        }
    }

    #[test]
    fn external_provider_is_dispatched() {
        let g = GridSystem::with_external(Arc::new(FakeHex));
        let c = g.encode(p(1.0, 1.0), GridFamily::ExternalHex, 3).unwrap();
        assert_eq!(c.family(), GridFamily::ExternalHex);
        assert_eq!(g.parent(c).unwrap().resolution(), 2);
        assert!(g.encode(p(1.0, 1.0), GridFamily::ExternalHex, 16).is_err());
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..180.0).prop_map(|(a, b)| p(a, b))
    }

    proptest! {
        #[test]
        fn roundtrip_contains(pt in arb_point(), r in 1u8..=12) {
            for fam in [GridFamily::Geohash, GridFamily::OffsetGeohash] {
                let c = encode(pt, fam, r).unwrap();
                prop_assert!(decode(c).unwrap().contains(pt));
                let back: CellId = c.to_string().parse().unwrap();
                prop_assert_eq!(back, c);
            }
        }

        #[test]
        fn prefix_hierarchy(pt in arb_point(), r in 1u8..12) {
            let a = encode(pt, GridFamily::Geohash, r).unwrap();
            let b = encode(pt, GridFamily::Geohash, r + 1).unwrap();
            prop_assert!(b.code().starts_with(&a.code()));
            prop_assert_eq!(parent(b).unwrap(), a);
            prop_assert!(decode(a).unwrap().contains_box(&decode(b).unwrap()));
        }
    }
}
