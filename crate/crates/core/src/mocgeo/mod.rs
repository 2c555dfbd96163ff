//! Mobility-of-care tagging at POI stops and gender-parity statistics.
//!
//! Case 1 tags a second-or-later bus boarding at a POI stop (trip chaining after a
//! presumed drop-off); Case 2 tags a bus alighting at a POI stop.

mod analysis;
mod parity;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use analysis::{
    write_flow_stats, write_parity_series, write_percentiles, Area, FlowRow, MocAnalyzer, MocConfig, MocReport,
    PercentileRow, Scope, SeriesEntry, Target,
};
pub use parity::{percentile, percentile_table, stop_deviation, ParityAccumulator, ParityCell, PERCENTILES};

use crate::ingest::{Journey, Mode, PoiClass, Stage, Stop};
use crate::netgeo::PoiStopSets;

/// 06:00 in seconds after midnight.
pub const WINDOW_START_S: u32 = 6 * 3600;
pub const BIN_SECONDS: u32 = 15 * 60;
pub const N_BINS: usize = 64;
pub const WINDOW_HOURS: f64 = 16.0;

/// 15-minute bin of a time of day, or `None` outside 06:00-22:00 (end exclusive).
pub fn time_bin(t: u32) -> Option<usize> {
    let offset = t.checked_sub(WINDOW_START_S)?;
    let bin = (offset / BIN_SECONDS) as usize;
    (bin < N_BINS).then_some(bin)
}

/// `HH:MM` start of a bin.
pub fn bin_start_label(bin: usize) -> String {
    let s = WINDOW_START_S + bin as u32 * BIN_SECONDS;
    format!("{:02}:{:02}", s / 3600, (s % 3600) / 60)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Case {
    /// Second-or-later boarding at a POI stop.
    One,
    /// Alighting at a POI stop.
    Two,
}

impl FromStr for Case {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "one" => Ok(Case::One),
            "2" | "two" => Ok(Case::Two),
            _ => Err(format!("case must be 1 or 2, got '{s}'")),
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::One => "1",
            Case::Two => "2",
        })
    }
}

/// Stop → POI classes whose stop set contains it.
#[derive(Debug, Clone, Default)]
pub struct StopClassIndex {
    by_stop: HashMap<String, Vec<PoiClass>>,
}

impl StopClassIndex {
    pub fn new(sets: &PoiStopSets) -> Self {
        let by_stop = sets
            .classes_by_stop()
            .into_iter()
            .map(|(stop, classes)| (stop, classes.into_iter().collect()))
            .collect();
        Self { by_stop }
    }

    pub fn classes(&self, stop_id: &str) -> &[PoiClass] {
        self.by_stop.get(stop_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_poi_stop(&self, stop_id: &str) -> bool {
        self.by_stop.contains_key(stop_id)
    }

    pub fn stops_of(&self, class: PoiClass) -> BTreeSet<&str> {
        self.by_stop
            .iter()
            .filter(|(_, c)| c.contains(&class))
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct MocTag {
    pub class: PoiClass,
    pub card_id: String,
    pub journey_id: String,
    pub stage_index: u32,
    pub stop_id: String,
    pub service_date: NaiveDate,
    /// Boarding time for Case 1, alighting time for Case 2.
    pub time: u32,
}

/// POI classes a stage counts toward under Case 1.
pub fn case1_classes<'a>(stage: &Stage, index: &'a StopClassIndex) -> &'a [PoiClass] {
    if stage.mode == Mode::Bus && stage.stage_index >= 2 {
        index.classes(&stage.board_stop)
    } else {
        &[]
    }
}

pub fn tag_case1(journeys: &[Journey], index: &StopClassIndex) -> Vec<MocTag> {
    journeys
        .iter()
        .flat_map(|j| j.stages.iter())
        .flat_map(|s| {
            case1_classes(s, index).iter().map(move |&class| MocTag {
                class,
                card_id: s.card_id.clone(),
                journey_id: s.journey_id.clone(),
                stage_index: s.stage_index,
                stop_id: s.board_stop.clone(),
                service_date: s.service_date,
                time: s.board_time,
            })
        })
        .collect()
}

/// The alighting stop and time of a bus stage, when an alighting was inferred. A missing
/// alighting time falls back to the boarding time.
pub fn case2_point(stage: &Stage) -> Option<(&str, u32)> {
    if stage.mode != Mode::Bus {
        return None;
    }
    let stop = stage.alight_stop.as_deref()?;
    Some((stop, stage.alight_time.unwrap_or(stage.board_time)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Case2Tags {
    pub tags: Vec<MocTag>,
    pub bus_stages: u64,
    pub without_alighting: u64,
}

impl Case2Tags {
    /// Share of bus stages with an inferred alighting.
    pub fn coverage(&self) -> f64 {
        coverage(self.bus_stages, self.without_alighting)
    }
}

pub(crate) fn coverage(bus_stages: u64, without: u64) -> f64 {
    if bus_stages == 0 {
        0.0
    } else {
        (bus_stages - without) as f64 / bus_stages as f64
    }
}

pub fn tag_case2<'a>(stages: impl IntoIterator<Item = &'a Stage>, index: &StopClassIndex) -> Case2Tags {
    let mut out = Case2Tags::default();
    for s in stages {
        if s.mode != Mode::Bus {
            continue;
        }
        out.bus_stages += 1;
        let Some((stop, time)) = case2_point(s) else {
            out.without_alighting += 1;
            continue;
        };
        for &class in index.classes(stop) {
            out.tags.push(MocTag {
                class,
                card_id: s.card_id.clone(),
                journey_id: s.journey_id.clone(),
                stage_index: s.stage_index,
                stop_id: stop.to_string(),
                service_date: s.service_date,
                time,
            });
        }
    }
    out
}

/// Axis-aligned lat/lon rectangle, closed on every side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterBox {
    pub lat_south: f64,
    pub lon_west: f64,
    pub lat_north: f64,
    pub lon_east: f64,
}

impl CenterBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_south..=self.lat_north).contains(&lat) && (self.lon_west..=self.lon_east).contains(&lon)
    }
}

impl fmt::Display for CenterBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.lat_south, self.lon_west, self.lat_north, self.lon_east)
    }
}

impl FromStr for CenterBox {
    type Err = String;

    /// `latS,lonW,latN,lonE`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad bbox component '{p}'")))
            .collect::<Result<_, _>>()?;
        let [lat_south, lon_west, lat_north, lon_east] = v[..] else {
            return Err(format!("bbox needs 4 comma-separated numbers, got '{s}'"));
        };
        if lat_south > lat_north || lon_west > lon_east {
            return Err(format!("bbox '{s}' has south > north or west > east"));
        }
        Ok(Self {
            lat_south,
            lon_west,
            lat_north,
            lon_east,
        })
    }
}

/// Splits stops into those inside the box and the complement, preserving input order.
pub fn city_center_filter<'a>(stops: &'a [Stop], bbox: &CenterBox) -> (Vec<&'a Stop>, Vec<&'a Stop>) {
    stops.iter().partition(|s| bbox.contains(s.lat, s.lon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{DayType, FareProduct};
    use crate::netgeo::PoiStopEntry;

    pub(crate) fn stage(card: &str, journey: &str, idx: u32, board: &str, alight: Option<&str>, t: u32) -> Stage {
        Stage {
            card_id: card.into(),
            journey_id: journey.into(),
            stage_index: idx,
            service_date: NaiveDate::from_ymd_opt(2019, 1, 7).unwrap(),
            board_stop: board.into(),
            alight_stop: alight.map(Into::into),
            board_time: t,
            alight_time: alight.map(|_| t + 600),
            mode: Mode::Bus,
            route_id: Some("R".into()),
            direction_id: Some(0),
            device_id: "D".into(),
            fare_product: FareProduct::Full,
            fare_paid: 200,
            distance_m: None,
        }
    }

    pub(crate) fn sets(entries: &[(PoiClass, &str)]) -> PoiStopSets {
        PoiStopSets {
            radius_m: 400.0,
            entries: entries
                .iter()
                .enumerate()
                .map(|(i, (class, stop))| PoiStopEntry {
                    class: *class,
                    poi_id: format!("p{i}"),
                    route_id: "R".into(),
                    direction_id: 0,
                    stop_id: stop.to_string(),
                    distance_m: 10.0,
                })
                .collect(),
        }
    }

    fn journey(stages: Vec<Stage>) -> Journey {
        Journey {
            journey_id: stages[0].journey_id.clone(),
            card_id: stages[0].card_id.clone(),
            service_date: stages[0].service_date,
            day_type: DayType::Weekday,
            stages,
        }
    }

    #[test]
    fn bins() {
        assert_eq!(time_bin(WINDOW_START_S - 1), None);
        assert_eq!(time_bin(WINDOW_START_S), Some(0));
        assert_eq!(time_bin(WINDOW_START_S + 899), Some(0));
        assert_eq!(time_bin(WINDOW_START_S + 900), Some(1));
        assert_eq!(time_bin(22 * 3600 - 1), Some(63));
        assert_eq!(time_bin(22 * 3600), None);
        assert_eq!(bin_start_label(9), "08:15");
    }

    #[test]
    fn case1_rules() {
        let idx = StopClassIndex::new(&sets(&[
            (PoiClass::Daycare, "D"),
            (PoiClass::School, "SG"),
            (PoiClass::Grocery, "SG"),
        ]));
        let single = journey(vec![stage("c", "j1", 1, "D", None, 30000)]);
        assert!(tag_case1(&[single], &idx).is_empty());

        let chained = journey(vec![
            stage("c", "j2", 1, "X", Some("D"), 30000),
            stage("c", "j2", 2, "D", None, 31000),
        ]);
        let tags = tag_case1(&[chained], &idx);
        assert_eq!(tags.len(), 1);
        assert_eq!((tags[0].class, tags[0].stage_index), (PoiClass::Daycare, 2));

        let both = journey(vec![stage("c", "j3", 1, "X", None, 30000), stage("c", "j3", 2, "SG", None, 31000)]);
        let classes: Vec<PoiClass> = tag_case1(&[both], &idx).into_iter().map(|t| t.class).collect();
        assert_eq!(classes, [PoiClass::School, PoiClass::Grocery]);
    }

    #[test]
    fn case2_rules() {
        let idx = StopClassIndex::new(&sets(&[(PoiClass::Grocery, "G")]));
        let stages = [
            stage("c", "j1", 1, "A", None, 30000),
            stage("c", "j2", 1, "A", Some("G"), 30000),
            stage("c", "j3", 1, "A", Some("B"), 30000),
        ];
        let out = tag_case2(&stages, &idx);
        assert_eq!(out.tags.len(), 1);
        assert_eq!(out.tags[0].class, PoiClass::Grocery);
        assert_eq!(out.tags[0].time, 30600);
        assert_eq!((out.bus_stages, out.without_alighting), (3, 1));
        assert!((out.coverage() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn center_box_is_closed() {
        let bbox: CenterBox = "38.88,-77.05,38.92,-77.00".parse().unwrap();
        let stops = vec![
            Stop { stop_id: "edge".into(), name: String::new(), lat: 38.88, lon: -77.00 },
            Stop { stop_id: "out".into(), name: String::new(), lat: 38.95, lon: -77.02 },
        ];
        let (inside, outside) = city_center_filter(&stops, &bbox);
        assert_eq!(inside.len(), 1);
        assert_eq!(inside[0].stop_id, "edge");
        assert_eq!(outside[0].stop_id, "out");
        let empty: CenterBox = "0,0,0.001,0.001".parse().unwrap();
        assert_eq!(city_center_filter(&stops, &empty).1.len(), 2);
        assert!("1,2,3".parse::<CenterBox>().is_err());
    }
}
