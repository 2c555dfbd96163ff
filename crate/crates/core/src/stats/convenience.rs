//! In-vehicle time and transfer samples for MoC and non-MoC journeys between the same
//! origin-destination pairs.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use super::MixedObservation;
use crate::ingest::Journey;

pub const MAX_SPEED_MPH: f64 = 25.0;
pub const MAX_IN_VEHICLE_MIN: f64 = 180.0;
const METERS_PER_MILE: f64 = 1609.344;

#[derive(Debug, Clone, Copy)]
pub struct ConvenienceOptions {
    pub max_speed_mph: f64,
    pub max_in_vehicle_min: f64,
}

impl Default for ConvenienceOptions {
    fn default() -> Self {
        Self {
            max_speed_mph: MAX_SPEED_MPH,
            max_in_vehicle_min: MAX_IN_VEHICLE_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdJourney {
    pub journey_id: String,
    pub od_pair: String,
    pub moc: bool,
    pub in_vehicle_min: f64,
    pub transfers: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConvenienceSamples {
    /// Retained journeys, ordered by O-D pair then journey id.
    pub journeys: Vec<OdJourney>,
    pub pairs: usize,
    /// Journeys lacking an alighting stop or time on some stage.
    pub incomplete: u64,
    pub outliers: u64,
    /// Journeys whose O-D pair lacks either MoC or non-MoC journeys.
    pub unpaired: u64,
}

impl ConvenienceSamples {
    fn select<T>(&self, moc: bool, f: impl Fn(&OdJourney) -> T) -> Vec<T> {
        self.journeys.iter().filter(|j| j.moc == moc).map(f).collect()
    }

    pub fn in_vehicle(&self, moc: bool) -> Vec<f64> {
        self.select(moc, |j| j.in_vehicle_min)
    }

    pub fn transfers(&self, moc: bool) -> Vec<f64> {
        self.select(moc, |j| f64::from(j.transfers))
    }

    pub fn mixed_observations(&self) -> Vec<MixedObservation> {
        self.journeys
            .iter()
            .map(|j| MixedObservation {
                group: j.od_pair.clone(),
                flag: u8::from(j.moc),
                y: j.in_vehicle_min,
            })
            .collect()
    }
}

fn summarize(j: &Journey, moc: bool, opts: &ConvenienceOptions) -> Result<Option<OdJourney>, ()> {
    let first = j.stages.first().ok_or(())?;
    let last = j.stages.last().ok_or(())?;
    let dest = last.alight_stop.as_deref().ok_or(())?;
    let mut seconds = 0.0;
    let mut meters = Some(0.0);
    for s in &j.stages {
        let alight = s.alight_time.ok_or(())?;
        seconds += f64::from(alight) - f64::from(s.board_time);
        meters = meters.zip(s.distance_m).map(|(a, b)| a + b);
    }
    let minutes = seconds / 60.0;
    if minutes <= 0.0 || minutes > opts.max_in_vehicle_min {
        return Ok(None);
    }
    if let Some(m) = meters {
        let mph = m / METERS_PER_MILE / (minutes / 60.0);
        if !(0.0..=opts.max_speed_mph).contains(&mph) {
            return Ok(None);
        }
    }
    Ok(Some(OdJourney {
        journey_id: j.journey_id.clone(),
        od_pair: format!("{}>{}", first.board_stop, dest),
        moc,
        in_vehicle_min: minutes,
        transfers: j.stages.len() as u32 - 1,
    }))
}

/// Pairs MoC journeys (ids in `moc_journeys`) with non-MoC journeys sharing their first
/// boarding stop and last alighting stop.
pub fn moc_convenience(
    journeys: &[Journey],
    moc_journeys: &HashSet<String>,
    opts: &ConvenienceOptions,
) -> ConvenienceSamples {
    let mut out = ConvenienceSamples::default();
    let mut by_pair: BTreeMap<String, Vec<OdJourney>> = BTreeMap::new();
    for j in journeys {
        match summarize(j, moc_journeys.contains(&j.journey_id), opts) {
            Err(()) => out.incomplete += 1,
            Ok(None) => out.outliers += 1,
            Ok(Some(od)) => by_pair.entry(od.od_pair.clone()).or_default().push(od),
        }
    }
    for (_, mut list) in by_pair {
        let moc = list.iter().filter(|j| j.moc).count();
        if moc == 0 || moc == list.len() {
            out.unpaired += list.len() as u64;
            continue;
        }
        list.sort_by(|a, b| a.journey_id.cmp(&b.journey_id));
        out.pairs += 1;
        out.journeys.extend(list);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{DayType, FareProduct, Mode, Stage};
    use chrono::NaiveDate;

    fn journey(id: &str, legs: &[(&str, Option<&str>, u32, Option<u32>, Option<f64>)]) -> Journey {
        let date = NaiveDate::from_ymd_opt(2019, 1, 7).unwrap();
        Journey {
            journey_id: id.into(),
            card_id: "c".into(),
            service_date: date,
            day_type: DayType::Weekday,
            stages: legs
                .iter()
                .enumerate()
                .map(|(i, &(b, a, bt, at, d))| Stage {
                    card_id: "c".into(),
                    journey_id: id.into(),
                    stage_index: i as u32,
                    service_date: date,
                    board_stop: b.into(),
                    alight_stop: a.map(Into::into),
                    board_time: bt,
                    alight_time: at,
                    mode: Mode::Bus,
                    route_id: None,
                    direction_id: None,
                    device_id: "d".into(),
                    fare_product: FareProduct::Full,
                    fare_paid: 200,
                    distance_m: d,
                })
                .collect(),
        }
    }

    #[test]
    fn pairing_and_transfers() {
        let js = vec![
            journey("m1", &[("A", Some("X"), 0, Some(600), None), ("X", Some("B"), 900, Some(1500), None)]),
            journey("n1", &[("A", Some("B"), 0, Some(900), None)]),
            journey("m2", &[("C", Some("D"), 0, Some(600), None)]),
            journey("n2", &[("A", None, 0, None, None)]),
        ];
        let moc: HashSet<String> = ["m1", "m2"].iter().map(|s| s.to_string()).collect();
        let s = moc_convenience(&js, &moc, &ConvenienceOptions::default());
        assert_eq!(s.pairs, 1);
        assert_eq!(s.unpaired, 1);
        assert_eq!(s.incomplete, 1);
        assert_eq!(s.in_vehicle(true), vec![20.0]);
        assert_eq!(s.transfers(true), vec![1.0]);
        assert_eq!(s.in_vehicle(false), vec![15.0]);
        assert_eq!(s.transfers(false), vec![0.0]);
        assert_eq!(s.mixed_observations().len(), 2);
    }

    #[test]
    fn outlier_screens() {
        let mile = METERS_PER_MILE;
        let js = vec![
            // 25 mph exactly is kept.
            journey("a", &[("A", Some("B"), 0, Some(3600), Some(25.0 * mile))]),
            journey("b", &[("A", Some("B"), 0, Some(3600), Some(25.1 * mile))]),
            journey("c", &[("A", Some("B"), 0, Some(181 * 60), None)]),
            journey("d", &[("A", Some("B"), 0, Some(180 * 60), None)]),
        ];
        let moc: HashSet<String> = ["a"].iter().map(|s| s.to_string()).collect();
        let s = moc_convenience(&js, &moc, &ConvenienceOptions::default());
        assert_eq!(s.outliers, 2);
        let ids: Vec<&str> = s.journeys.iter().map(|j| j.journey_id.as_str()).collect();
        assert_eq!(ids, ["a", "d"]);
    }
}
