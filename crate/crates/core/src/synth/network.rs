//! Grid street network, bus routes along grid lines and POIs near stops.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::manifest::PoiTruth;
use super::SynthConfig;
use crate::ingest::{GtfsSnapshot, LatLon, Poi, PoiClass, Route, Stop, StopTime, Trip};
use crate::mocgeo::CenterBox;
use crate::netgeo::{distance, DEFAULT_RADIUS_M, METERS_PER_DEGREE};

pub(crate) const SPACING_M: f64 = 250.0;
const ORIGIN: (f64, f64) = (38.88, -77.06);
const MAX_POI_OFFSET_M: f64 = 150.0;
const FAR_POI_OFFSET_M: f64 = 1500.0;

pub(crate) fn stop_id(k: usize) -> String {
    format!("S{k:04}")
}

#[derive(Debug, Clone)]
pub(crate) struct Pattern {
    pub route_id: String,
    pub direction_id: u8,
    pub stops: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Network {
    pub gtfs: GtfsSnapshot,
    pub patterns: Vec<Pattern>,
    /// Per stop, the `(pattern, position)` pairs serving it.
    pub serving: Vec<Vec<(usize, usize)>>,
    pub center: CenterBox,
    pub inside_center: usize,
}

impl Network {
    pub fn served_stops(&self) -> Vec<usize> {
        (0..self.serving.len()).filter(|&k| !self.serving[k].is_empty()).collect()
    }

    pub fn location(&self, k: usize) -> LatLon {
        self.gtfs.stops[k].location()
    }
}

fn deltas() -> (f64, f64) {
    let dlat = SPACING_M / METERS_PER_DEGREE;
    let dlon = SPACING_M / (METERS_PER_DEGREE * ORIGIN.0.to_radians().cos());
    (dlat, dlon)
}

pub(crate) fn build(config: &SynthConfig, _rng: &mut ChaCha8Rng) -> Network {
    let n = config.n_stops;
    let rows = ((n as f64 / 2.0).sqrt().ceil() as usize).max(1);
    let cols = n.div_ceil(rows);
    let (dlat, dlon) = deltas();
    let stops: Vec<Stop> = (0..n)
        .map(|k| Stop {
            stop_id: stop_id(k),
            name: format!("Stop {k}"),
            lat: ORIGIN.0 + (k / cols) as f64 * dlat,
            lon: ORIGIN.1 + (k % cols) as f64 * dlon,
        })
        .collect();

    let horizontal = if config.n_routes == 1 {
        1
    } else {
        (config.n_routes - config.n_routes / 3).min(rows)
    };
    let vertical = (config.n_routes - horizontal).min(cols);
    let mut lines: Vec<Vec<usize>> = Vec::new();
    for i in 0..horizontal {
        let r = i * rows / horizontal;
        lines.push((0..cols).map(|c| r * cols + c).filter(|&k| k < n).collect());
    }
    for j in 0..vertical {
        let c = j * cols / vertical + cols / (2 * vertical);
        lines.push((0..rows).map(|r| r * cols + c).filter(|&k| k < n).collect());
    }
    lines.retain(|l| l.len() >= 2);

    let mut gtfs = GtfsSnapshot {
        stops,
        ..GtfsSnapshot::default()
    };
    let mut patterns = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let route_id = format!("R{:02}", i + 1);
        gtfs.routes.push(Route {
            route_id: route_id.clone(),
        });
        for direction_id in 0..2u8 {
            let mut seq = line.clone();
            if direction_id == 1 {
                seq.reverse();
            }
            let trip_id = format!("{route_id}_{direction_id}");
            gtfs.trips.push(Trip {
                route_id: route_id.clone(),
                trip_id: trip_id.clone(),
                direction_id,
            });
            for (s, &k) in seq.iter().enumerate() {
                gtfs.stop_times.push(StopTime {
                    trip_id: trip_id.clone(),
                    stop_sequence: s as u32 + 1,
                    stop_id: stop_id(k),
                });
            }
            patterns.push(Pattern {
                route_id: route_id.clone(),
                direction_id,
                stops: seq,
            });
        }
    }
    let mut serving = vec![Vec::new(); n];
    for (p, pat) in patterns.iter().enumerate() {
        for (pos, &k) in pat.stops.iter().enumerate() {
            serving[k].push((p, pos));
        }
    }

    // At least one column so that the box is never empty.
    let inside_cols = (cols as f64 * config.center_share).round() as usize;
    let center = CenterBox {
        lat_south: ORIGIN.0 - dlat / 2.0,
        lon_west: ORIGIN.1 - dlon / 2.0,
        lat_north: ORIGIN.0 + (rows as f64 - 0.5) * dlat,
        lon_east: ORIGIN.1 + (inside_cols.max(1) as f64 - 0.5) * dlon,
    };
    let inside_center = (0..n).filter(|k| k % cols < inside_cols.max(1)).count();
    Network {
        gtfs,
        patterns,
        serving,
        center,
        inside_center,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PlacedPois {
    pub pois: Vec<Poi>,
    pub truths: Vec<PoiTruth>,
    /// POI classes served by each stop at the default radius.
    pub classes_by_stop: Vec<BTreeSet<PoiClass>>,
}

impl PlacedPois {
    pub fn stops_of(&self, class: PoiClass) -> Vec<usize> {
        (0..self.classes_by_stop.len())
            .filter(|&k| self.classes_by_stop[k].contains(&class))
            .collect()
    }

    pub fn is_poi_stop(&self, k: usize) -> bool {
        !self.classes_by_stop[k].is_empty()
    }
}

fn offset(origin: LatLon, meters: f64, bearing: f64) -> LatLon {
    let lat = origin.lat + meters * bearing.cos() / METERS_PER_DEGREE;
    let mean = ((origin.lat + lat) / 2.0).to_radians();
    LatLon::new(lat, origin.lon + meters * bearing.sin() / (METERS_PER_DEGREE * mean.cos()))
}

/// Places POIs around random served stops; with five or more POIs per class the last one is
/// placed far from the network so that it matches no stop.
pub(crate) fn place_pois(config: &SynthConfig, net: &Network, rng: &mut ChaCha8Rng) -> PlacedPois {
    let served = net.served_stops();
    let mut pois = Vec::new();
    let mut truths = Vec::new();
    for class in PoiClass::ALL {
        for i in 0..config.n_pois_per_class {
            let far = config.n_pois_per_class >= 5 && i + 1 == config.n_pois_per_class;
            let anchor = served[rng.random_range(0..served.len())];
            let bearing = rng.random_range(0.0..std::f64::consts::TAU);
            let (loc, truth_anchor) = if far {
                let base = LatLon::new(net.location(0).lat, net.location(anchor).lon);
                (offset(base, FAR_POI_OFFSET_M, std::f64::consts::PI), None)
            } else {
                let d = rng.random_range(0.0..MAX_POI_OFFSET_M);
                (offset(net.location(anchor), d, bearing), Some(anchor))
            };
            let poi_id = format!("{}_{:03}", class.as_str(), i + 1);
            truths.push(PoiTruth {
                poi_id: poi_id.clone(),
                class,
                anchor_stop: truth_anchor.map(stop_id),
                anchor_distance_m: truth_anchor.map(|a| distance(loc, net.location(a))),
            });
            pois.push(Poi {
                poi_id,
                class,
                lat: loc.lat,
                lon: loc.lon,
            });
        }
    }

    // Exhaustive nearest serving stop per (POI, pattern); ties go to the smaller stop id.
    let mut classes_by_stop = vec![BTreeSet::new(); config.n_stops];
    for poi in &pois {
        for pat in &net.patterns {
            let best = pat
                .stops
                .iter()
                .map(|&k| (distance(poi.location(), net.location(k)), k))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((d, k)) = best {
                if d <= DEFAULT_RADIUS_M {
                    classes_by_stop[k].insert(poi.class);
                }
            }
        }
    }
    PlacedPois {
        pois,
        truths,
        classes_by_stop,
    }
}

/// Stop ids per class, for the manifest.
pub(crate) fn poi_stop_ids(placed: &PlacedPois) -> BTreeMap<PoiClass, Vec<String>> {
    PoiClass::ALL
        .iter()
        .map(|&c| (c, placed.stops_of(c).into_iter().map(stop_id).collect()))
        .collect()
}
