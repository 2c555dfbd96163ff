//! Route-direction stop patterns and POI-to-nearest-stop matching.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::csvutil::{csv_error, file_label, open_reader, open_writer, Columns};
use crate::ingest::{GtfsSnapshot, IngestError, LatLon, Poi, PoiClass, Stop};

/// Mean Earth radius (IUGG), metres.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Metres per degree of latitude on the mean-radius sphere.
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

pub const DEFAULT_RADIUS_M: f64 = 400.0;

#[derive(Debug, Error)]
pub enum NetgeoError {
    #[error("radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("pattern {route_id}/{direction_id} references unknown stop '{stop_id}'")]
    UnknownStop {
        route_id: String,
        direction_id: u8,
        stop_id: String,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Equirectangular distance in metres: longitude differences are scaled by the cosine
/// of the mean latitude. Symmetric, and zero only for identical points.
pub fn distance(a: LatLon, b: LatLon) -> f64 {
    let mean_lat = ((a.lat + b.lat) * 0.5).to_radians();
    let dx = (b.lon - a.lon) * mean_lat.cos() * METERS_PER_DEGREE;
    let dy = (b.lat - a.lat) * METERS_PER_DEGREE;
    dx.hypot(dy)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RouteDirectionPattern {
    pub route_id: String,
    pub direction_id: u8,
    pub stops: Vec<String>,
}

/// One pattern per `(route_id, direction_id)`; the stop list is the first-appearance union
/// of the pair's trips taken in `trip_id` order.
pub fn build_patterns(gtfs: &GtfsSnapshot) -> Vec<RouteDirectionPattern> {
    let mut trips_by_key: BTreeMap<(&str, u8), Vec<&str>> = BTreeMap::new();
    for t in &gtfs.trips {
        trips_by_key
            .entry((t.route_id.as_str(), t.direction_id))
            .or_default()
            .push(t.trip_id.as_str());
    }
    // stop_times are sorted by (trip_id, stop_sequence) on load; re-sort defensively for
    // snapshots assembled in memory.
    let mut by_trip: HashMap<&str, Vec<(u32, &str)>> = HashMap::new();
    for st in &gtfs.stop_times {
        by_trip
            .entry(st.trip_id.as_str())
            .or_default()
            .push((st.stop_sequence, st.stop_id.as_str()));
    }
    for seq in by_trip.values_mut() {
        seq.sort_unstable();
    }
    trips_by_key
        .into_iter()
        .filter_map(|((route_id, direction_id), mut trips)| {
            trips.sort_unstable();
            let mut seen = HashSet::new();
            let mut stops = Vec::new();
            for trip in trips {
                for (_, stop) in by_trip.get(trip).map(Vec::as_slice).unwrap_or(&[]) {
                    if seen.insert(*stop) {
                        stops.push(stop.to_string());
                    }
                }
            }
            (!stops.is_empty()).then(|| RouteDirectionPattern {
                route_id: route_id.to_string(),
                direction_id,
                stops,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoiStopEntry {
    pub class: PoiClass,
    pub poi_id: String,
    pub route_id: String,
    pub direction_id: u8,
    pub stop_id: String,
    pub distance_m: f64,
}

/// Nearest serving stops for every POI class at one radius.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoiStopSets {
    pub radius_m: f64,
    /// Sorted by `(class, poi_id, route_id, direction_id)`; at most one entry per key.
    pub entries: Vec<PoiStopEntry>,
}

impl PoiStopSets {
    pub fn class_entries(&self, class: PoiClass) -> impl Iterator<Item = &PoiStopEntry> {
        self.entries.iter().filter(move |e| e.class == class)
    }

    /// The deduplicated stop set of one class.
    pub fn stop_ids(&self, class: PoiClass) -> BTreeSet<String> {
        self.class_entries(class).map(|e| e.stop_id.clone()).collect()
    }

    /// Stop → classes it serves.
    pub fn classes_by_stop(&self) -> HashMap<String, BTreeSet<PoiClass>> {
        let mut out: HashMap<String, BTreeSet<PoiClass>> = HashMap::new();
        for e in &self.entries {
            out.entry(e.stop_id.clone()).or_default().insert(e.class);
        }
        out
    }

    pub fn all_stop_ids(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.stop_id.clone()).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), NetgeoError> {
        let path = path.as_ref();
        let mut w = open_writer(path)?;
        w.write_record(["class", "poi_id", "route_id", "direction_id", "stop_id", "distance_m"])
            .map_err(|e| csv_error(path, e))?;
        for e in &self.entries {
            w.write_record([
                e.class.as_str(),
                &e.poi_id,
                &e.route_id,
                &e.direction_id.to_string(),
                &e.stop_id,
                &e.distance_m.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| IngestError::Io {
            file: file_label(path),
            source: e,
        })?;
        Ok(())
    }

    /// Reads a `poi_stops.csv`. The radius is not stored in the file; it is taken as the
    /// largest distance present (0 for an empty file).
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, NetgeoError> {
        let path = path.as_ref();
        let mut rdr = open_reader(path)?;
        let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        let cols = Columns::resolve(
            path,
            &headers,
            &["class", "poi_id", "route_id", "direction_id", "stop_id", "distance_m"],
            &[],
        )?;
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |reason: &str| IngestError::MalformedRow {
                file: file_label(path),
                line,
                reason: reason.to_string(),
            };
            entries.push(PoiStopEntry {
                class: cols.get(&rec, 0).parse().map_err(|value| IngestError::UnknownClass {
                    file: file_label(path),
                    line,
                    value,
                })?,
                poi_id: cols.get(&rec, 1).to_string(),
                route_id: cols.get(&rec, 2).to_string(),
                direction_id: cols.get(&rec, 3).parse().map_err(|_| bad("direction_id"))?,
                stop_id: cols.get(&rec, 4).to_string(),
                distance_m: cols.get(&rec, 5).parse().map_err(|_| bad("distance_m"))?,
            });
        }
        entries.sort_by(entry_order);
        let radius_m = entries.iter().map(|e| e.distance_m).fold(0.0, f64::max);
        Ok(Self { radius_m, entries })
    }
}

fn entry_order(a: &PoiStopEntry, b: &PoiStopEntry) -> Ordering {
    (a.class, &a.poi_id, &a.route_id, a.direction_id).cmp(&(b.class, &b.poi_id, &b.route_id, b.direction_id))
}

/// Uniform lat/lon grid over stops whose cells are at least `radius` wide at every
/// latitude present, so all stops within `radius` of a point lie in the 3x3 neighbourhood.
struct StopGrid<'a> {
    cell_lat: f64,
    cell_lon: f64,
    cells: HashMap<(i64, i64), Vec<&'a Stop>>,
}

impl<'a> StopGrid<'a> {
    fn new(stops: &[&'a Stop], extra_points: impl Iterator<Item = LatLon>, radius: f64) -> Self {
        let max_abs_lat = stops
            .iter()
            .map(|s| s.lat.abs())
            .chain(extra_points.map(|p| p.lat.abs()))
            .fold(0.0_f64, f64::max)
            .min(89.0);
        // Slight inflation absorbs rounding at cell borders.
        let cell_lat = radius / METERS_PER_DEGREE * 1.001;
        let cell_lon = cell_lat / max_abs_lat.to_radians().cos();
        let mut cells: HashMap<(i64, i64), Vec<&Stop>> = HashMap::new();
        for s in stops {
            cells
                .entry(Self::key(s.lat, s.lon, cell_lat, cell_lon))
                .or_default()
                .push(s);
        }
        Self {
            cell_lat,
            cell_lon,
            cells,
        }
    }

    fn key(lat: f64, lon: f64, cell_lat: f64, cell_lon: f64) -> (i64, i64) {
        ((lat / cell_lat).floor() as i64, (lon / cell_lon).floor() as i64)
    }

    fn neighbours(&self, p: LatLon) -> impl Iterator<Item = &'a Stop> + '_ {
        let (ky, kx) = Self::key(p.lat, p.lon, self.cell_lat, self.cell_lon);
        (-1..=1).flat_map(move |dy| {
            (-1..=1).flat_map(move |dx| {
                self.cells
                    .get(&(ky + dy, kx + dx))
                    .into_iter()
                    .flat_map(|v| v.iter().copied())
            })
        })
    }
}

/// For every POI and route-direction pattern, the pattern stop closest to the POI when it
/// lies within `radius_m`. Equal distances resolve to the smaller `stop_id`.
pub fn nearest_stops(
    pois: &[Poi],
    patterns: &[RouteDirectionPattern],
    stops: &[Stop],
    radius_m: f64,
) -> Result<PoiStopSets, NetgeoError> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(NetgeoError::InvalidRadius(radius_m));
    }
    let stop_by_id: HashMap<&str, &Stop> = stops.iter().map(|s| (s.stop_id.as_str(), s)).collect();
    let mut patterns_by_stop: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, p) in patterns.iter().enumerate() {
        for sid in &p.stops {
            if !stop_by_id.contains_key(sid.as_str()) {
                return Err(NetgeoError::UnknownStop {
                    route_id: p.route_id.clone(),
                    direction_id: p.direction_id,
                    stop_id: sid.clone(),
                });
            }
            patterns_by_stop.entry(sid.as_str()).or_default().push(i);
        }
    }
    let served: Vec<&Stop> = stops
        .iter()
        .filter(|s| patterns_by_stop.contains_key(s.stop_id.as_str()))
        .collect();
    let grid = StopGrid::new(&served, pois.iter().map(Poi::location), radius_m);

    let mut entries: Vec<PoiStopEntry> = pois
        .par_iter()
        .flat_map_iter(|poi| {
            let here = poi.location();
            let mut best: HashMap<usize, (f64, &str)> = HashMap::new();
            for stop in grid.neighbours(here) {
                let d = distance(here, stop.location());
                if d > radius_m {
                    continue;
                }
                for &pi in &patterns_by_stop[stop.stop_id.as_str()] {
                    let candidate = (d, stop.stop_id.as_str());
                    best.entry(pi)
                        .and_modify(|cur| {
                            if closer(candidate, *cur) {
                                *cur = candidate;
                            }
                        })
                        .or_insert(candidate);
                }
            }
            best.into_iter()
                .map(|(pi, (d, sid))| PoiStopEntry {
                    class: poi.class,
                    poi_id: poi.poi_id.clone(),
                    route_id: patterns[pi].route_id.clone(),
                    direction_id: patterns[pi].direction_id,
                    stop_id: sid.to_string(),
                    distance_m: d,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    entries.sort_by(entry_order);
    Ok(PoiStopSets { radius_m, entries })
}

fn closer(a: (f64, &str), b: (f64, &str)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Less => true,
        Ordering::Equal => a.1 < b.1,
        Ordering::Greater => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BufferRow {
    pub class: PoiClass,
    pub stops: usize,
    /// `(threshold_m, fraction of entries with distance <= threshold)`.
    pub within: Vec<(f64, f64)>,
}

pub const SENSITIVITY_THRESHOLDS_M: [f64; 3] = [200.0, 100.0, 50.0];

/// Fraction of each class's entries whose stored distance falls under each threshold.
pub fn buffer_sensitivity(sets: &PoiStopSets, thresholds: &[f64]) -> Vec<BufferRow> {
    PoiClass::ALL
        .iter()
        .map(|&class| {
            let dists: Vec<f64> = sets.class_entries(class).map(|e| e.distance_m).collect();
            let within = thresholds
                .iter()
                .map(|&t| {
                    let frac = if dists.is_empty() {
                        0.0
                    } else {
                        dists.iter().filter(|&&d| d <= t).count() as f64 / dists.len() as f64
                    };
                    (t, frac)
                })
                .collect();
            BufferRow {
                class,
                stops: dists.len(),
                within,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanDistances {
    pub per_class: Vec<(PoiClass, Option<f64>)>,
    pub overall: Option<f64>,
}

/// Arithmetic mean of per-(POI, pattern) distances, per class and pooled.
pub fn mean_nearest_distance(sets: &PoiStopSets) -> MeanDistances {
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let per_class = PoiClass::ALL
        .iter()
        .map(|&c| {
            let d: Vec<f64> = sets.class_entries(c).map(|e| e.distance_m).collect();
            (c, mean(&d))
        })
        .collect();
    let all: Vec<f64> = sets.entries.iter().map(|e| e.distance_m).collect();
    MeanDistances {
        per_class,
        overall: mean(&all),
    }
}
