use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::IngestError;

/// The nine parent venue categories, in alphabetical (class index) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Activity {
    ArtsEntertainment,
    CollegeUniversity,
    Food,
    NightlifeSpot,
    OutdoorsRecreation,
    ProfessionalOther,
    Residence,
    ShopService,
    TravelTransport,
}

impl Activity {
    pub const ALL: [Activity; 9] = [
        Activity::ArtsEntertainment,
        Activity::CollegeUniversity,
        Activity::Food,
        Activity::NightlifeSpot,
        Activity::OutdoorsRecreation,
        Activity::ProfessionalOther,
        Activity::Residence,
        Activity::ShopService,
        Activity::TravelTransport,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Activity> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Activity::ArtsEntertainment => "Arts & Entertainment",
            Activity::CollegeUniversity => "College & University",
            Activity::Food => "Food",
            Activity::NightlifeSpot => "Nightlife Spot",
            Activity::OutdoorsRecreation => "Outdoors & Recreation",
            Activity::ProfessionalOther => "Professional & Other Places",
            Activity::Residence => "Residence",
            Activity::ShopService => "Shop & Service",
            Activity::TravelTransport => "Travel & Transport",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|a| a.name()).collect()
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activity {
    type Err = IngestError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Activity::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| IngestError::UnknownCategory(s.to_string()))
    }
}

impl Serialize for Activity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Activity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    #[default]
    Drop,
    Error,
}

/// Mapping from raw venue category names onto the parent activities.
#[derive(Debug, Clone, Default)]
pub struct ActivityTaxonomy {
    map: HashMap<String, Activity>,
}

impl ActivityTaxonomy {
    /// Two tab-separated columns per line: raw category, parent activity.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut map = HashMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (raw, parent) = line.split_once('\t').ok_or_else(|| {
                IngestError::Taxonomy(format!("line {}: expected two tab-separated columns", no + 1))
            })?;
            let parent: Activity = parent
                .parse()
                .map_err(|_| IngestError::Taxonomy(format!("line {}: unknown parent {parent:?}", no + 1)))?;
            map.insert(normalize(raw), parent);
        }
        if map.is_empty() {
            return Err(IngestError::Taxonomy("no mappings".into()));
        }
        Ok(ActivityTaxonomy { map })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            IngestError::Taxonomy(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::parse(&text)
    }

    /// The bundled Foursquare category hierarchy.
    pub fn foursquare() -> Self {
        Self::parse(include_str!("../../fixtures/fsq_categories.tsv")).expect("bundled taxonomy parses")
    }

    pub fn lookup(&self, raw: &str) -> Option<Activity> {
        self.map
            .get(&normalize(raw))
            .copied()
            .or_else(|| raw.parse().ok())
    }

    /// Map a raw category; `Ok(None)` means the record should be dropped.
    pub fn map_category(&self, raw: &str, policy: UnknownPolicy) -> Result<Option<Activity>, IngestError> {
        match (self.lookup(raw), policy) {
            (Some(a), _) => Ok(Some(a)),
            (None, UnknownPolicy::Drop) => Ok(None),
            (None, UnknownPolicy::Error) => Err(IngestError::UnknownCategory(raw.to_string())),
        }
    }

    /// Raw names mapping to `activity`, sorted.
    pub fn raw_names(&self, activity: Activity) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .map
            .iter()
            .filter(|(_, a)| **a == activity)
            .map(|(k, _)| k.as_str())
            .collect();
        v.sort_unstable();
        v
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn normalize(raw: &str) -> String {
    raw.trim().to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_sorted_classes() {
        let names = Activity::names();
        assert_eq!(names.len(), 9);
        let mut sorted = names.clone();
        sorted.sort_unstable();
        assert_eq!(names, sorted);
        for (i, a) in Activity::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Activity::from_index(i), Some(*a));
        }
    }

    #[test]
    fn bundled_fixture_maps_known_categories() {
        let t = ActivityTaxonomy::foursquare();
        assert_eq!(t.lookup("Ramen / Noodle House"), Some(Activity::Food));
        assert_eq!(t.lookup("Home (private)"), Some(Activity::Residence));
        assert_eq!(t.lookup("Train Station"), Some(Activity::TravelTransport));
        assert_eq!(t.lookup("  bar "), Some(Activity::NightlifeSpot));
        for a in Activity::ALL {
            assert!(!t.raw_names(a).is_empty(), "{a}");
        }
    }

    #[test]
    fn unknown_policy() {
        let t = ActivityTaxonomy::foursquare();
        assert_eq!(t.map_category("???", UnknownPolicy::Drop).unwrap(), None);
        assert!(matches!(
            t.map_category("???", UnknownPolicy::Error),
            Err(IngestError::UnknownCategory(_))
        ));
    }

    #[test]
    fn malformed_taxonomy() {
        assert!(ActivityTaxonomy::parse("Bar Nightlife Spot\n").is_err());
        assert!(ActivityTaxonomy::parse("Bar\tNightclubs\n").is_err());
        assert!(ActivityTaxonomy::parse("# only a comment\n").is_err());
    }
}
