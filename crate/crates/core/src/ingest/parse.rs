use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use flate2::read::MultiGzDecoder;

use super::IngestError;
use crate::geodesy::GeoPoint;
use crate::par;

/// One line of the tab-separated check-in dump.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCheckIn {
    pub line: usize,
    pub user_id: String,
    pub venue_id: String,
    pub category_id: String,
    pub venue_category: String,
    pub point: GeoPoint,
    pub tz_offset_minutes: i32,
    pub utc_time: DateTime<Utc>,
}

impl RawCheckIn {
    pub fn local_time(&self) -> NaiveDateTime {
        self.utc_time.naive_utc() + chrono::Duration::minutes(i64::from(self.tz_offset_minutes))
    }
}

#[derive(Debug, Clone)]
pub struct ParseReport {
    pub records: Vec<RawCheckIn>,
    pub total_lines: usize,
    pub malformed: usize,
}

/// Open a possibly gzip-compressed file.
pub fn open_input(path: impl AsRef<Path>) -> Result<Box<dyn BufRead>, IngestError> {
    let mut f = File::open(path.as_ref())?;
    let mut magic = [0u8; 2];
    let n = f.read(&mut magic)?;
    let f = File::open(path.as_ref())?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(f))))
    } else {
        Ok(Box::new(BufReader::new(f)))
    }
}

pub fn parse_checkins_path(path: impl AsRef<Path>, tolerance: f64) -> Result<ParseReport, IngestError> {
    parse_checkins(open_input(path)?, tolerance)
}

/// Parse `user, venue, category id, category name, lat, lon, tz offset, utc time`
/// lines. Malformed lines are counted and skipped; more than `tolerance`
/// (a fraction) of them fails the whole input.
pub fn parse_checkins<R: BufRead>(input: R, tolerance: f64) -> Result<ParseReport, IngestError> {
    let mut lines = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    if lines.is_empty() {
        return Err(IngestError::Empty);
    }
    let parsed = par::map_range(lines.len(), |i| parse_line(i + 1, &lines[i]));
    let total = parsed.len();
    let records: Vec<RawCheckIn> = parsed.into_iter().flatten().collect();
    let malformed = total - records.len();
    if malformed as f64 > tolerance * total as f64 {
        return Err(IngestError::Quality {
            malformed,
            total,
            tolerance,
        });
    }
    if malformed > 0 {
        log::warn!("skipped {malformed} malformed of {total} lines");
    }
    Ok(ParseReport {
        records,
        total_lines: total,
        malformed,
    })
}

fn parse_line(line_no: usize, line: &str) -> Option<RawCheckIn> {
    let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
    if cols.len() != 8 {
        return None;
    }
    let nonempty = |s: &str| (!s.trim().is_empty()).then(|| s.trim().to_string());
    let lat: f64 = cols[4].trim().parse().ok()?;
    let lon: f64 = cols[5].trim().parse().ok()?;
    if !(-180.0..=180.0).contains(&lon) {
        return None;
    }
    let point = GeoPoint::new(lat, lon).ok()?;
    Some(RawCheckIn {
        line: line_no,
        user_id: nonempty(cols[0])?,
        venue_id: nonempty(cols[1])?,
        category_id: cols[2].trim().to_string(),
        venue_category: nonempty(cols[3])?,
        point,
        tz_offset_minutes: cols[6].trim().parse().ok()?,
        utc_time: parse_time(cols[7].trim())?,
    })
}

/// Accepts the dump's `Tue Apr 03 18:00:09 +0000 2012` form, RFC 3339, or a
/// bare `YYYY-MM-DD HH:MM:SS` taken as UTC.
pub(crate) fn parse_time(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y") {
        return Some(t.with_timezone(&Utc));
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .ok()
        .map(|t| Utc.from_utc_datetime(&t))
}
