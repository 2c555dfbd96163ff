//! Parsing and validation of every external input.
//!
//! All loaders return immutable values; errors carry the offending file and line.

mod gtfs;
mod journeys;
mod pois;
mod registrations;
mod stages;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gtfs::{load_gtfs, write_gtfs, GtfsSnapshot, Route, StopTime, Trip};
pub use journeys::assemble_journeys;
pub use pois::{load_pois, write_pois};
pub use registrations::{load_registrations, write_registrations};
pub use stages::{load_stages, write_stages, ErrorPolicy, StageReader, StageWriter, STAGE_HEADER};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing input file {}", path.display())]
    MissingFile { path: PathBuf },
    #[error("{file}:{line}: malformed row: {reason}")]
    MalformedRow {
        file: String,
        line: u64,
        reason: String,
    },
    #[error("{file}:{line}: dangling {kind} reference '{id}'")]
    DanglingReference {
        file: String,
        line: u64,
        kind: &'static str,
        id: String,
    },
    #[error("{file}:{line}: unknown POI class '{value}'")]
    UnknownClass {
        file: String,
        line: u64,
        value: String,
    },
    #[error("journey '{journey_id}': {reason}")]
    InvalidJourney { journey_id: String, reason: String },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stop {
    pub stop_id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

impl Stop {
    pub fn location(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoiClass {
    Daycare,
    School,
    Grocery,
}

impl PoiClass {
    pub const ALL: [PoiClass; 3] = [PoiClass::Daycare, PoiClass::School, PoiClass::Grocery];

    pub fn as_str(&self) -> &'static str {
        match self {
            PoiClass::Daycare => "daycare",
            PoiClass::School => "school",
            PoiClass::Grocery => "grocery",
        }
    }
}

impl fmt::Display for PoiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoiClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "daycare" | "daycares" => Ok(PoiClass::Daycare),
            "school" | "schools" => Ok(PoiClass::School),
            "grocery" | "groceries" => Ok(PoiClass::Grocery),
            _ => Err(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poi {
    pub poi_id: String,
    pub class: PoiClass,
    pub lat: f64,
    pub lon: f64,
}

impl Poi {
    pub fn location(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bus,
    Rail,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Bus => "bus",
            Mode::Rail => "rail",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bus" | "Bus" | "BUS" => Ok(Mode::Bus),
            "rail" | "Rail" | "RAIL" => Ok(Mode::Rail),
            _ => Err(format!("unknown mode '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FareProduct {
    Full,
    Student,
    Senior,
    Disabled,
    WeeklyPass,
    Other,
}

impl FareProduct {
    pub const ALL: [FareProduct; 6] = [
        FareProduct::Full,
        FareProduct::Student,
        FareProduct::Senior,
        FareProduct::Disabled,
        FareProduct::WeeklyPass,
        FareProduct::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FareProduct::Full => "full",
            FareProduct::Student => "student",
            FareProduct::Senior => "senior",
            FareProduct::Disabled => "disabled",
            FareProduct::WeeklyPass => "weekly_pass",
            FareProduct::Other => "other",
        }
    }
}

impl fmt::Display for FareProduct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FareProduct {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FareProduct::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown fare product '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    pub fn of(date: NaiveDate) -> Self {
        match date.weekday() {
            Weekday::Sat | Weekday::Sun => DayType::Weekend,
            _ => DayType::Weekday,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DayType::Weekday => "weekday",
            DayType::Weekend => "weekend",
        }
    }
}

impl FromStr for DayType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weekday" => Ok(DayType::Weekday),
            "weekend" => Ok(DayType::Weekend),
            _ => Err(format!("unknown day type '{s}'")),
        }
    }
}

/// One vehicle leg. Times are seconds since midnight of `service_date`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub card_id: String,
    pub journey_id: String,
    pub stage_index: u32,
    pub service_date: NaiveDate,
    pub board_stop: String,
    pub alight_stop: Option<String>,
    pub board_time: u32,
    pub alight_time: Option<u32>,
    pub mode: Mode,
    pub route_id: Option<String>,
    pub direction_id: Option<u8>,
    pub device_id: String,
    pub fare_product: FareProduct,
    pub fare_paid: i64,
    pub distance_m: Option<f64>,
}

impl Stage {
    pub fn day_type(&self) -> DayType {
        DayType::of(self.service_date)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Journey {
    pub journey_id: String,
    pub card_id: String,
    pub stages: Vec<Stage>,
    pub service_date: NaiveDate,
    pub day_type: DayType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CardRegistration {
    pub card_id: String,
    pub first_name_raw: Option<String>,
    pub registered: bool,
}
