use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::{IngestError, Stop};
use crate::csvutil::{csv_error, file_label, open_reader, open_writer, Columns};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub route_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trip {
    pub route_id: String,
    pub trip_id: String,
    pub direction_id: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopTime {
    pub trip_id: String,
    pub stop_sequence: u32,
    pub stop_id: String,
}

/// The GTFS subset needed for stop matching. `stop_times` is sorted by
/// `(trip_id, stop_sequence)`; everything else keeps file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GtfsSnapshot {
    pub stops: Vec<Stop>,
    pub routes: Vec<Route>,
    pub trips: Vec<Trip>,
    pub stop_times: Vec<StopTime>,
}

impl GtfsSnapshot {
    pub fn stops_by_id(&self) -> HashMap<&str, &Stop> {
        self.stops.iter().map(|s| (s.stop_id.as_str(), s)).collect()
    }
}

fn malformed(path: &Path, line: u64, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRow {
        file: file_label(path),
        line,
        reason: reason.into(),
    }
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_coord(path: &Path, line: u64, raw: &str, name: &str, bound: f64) -> Result<f64, IngestError> {
    let v: f64 = raw
        .parse()
        .map_err(|_| malformed(path, line, format!("{name} '{raw}' is not a number")))?;
    if !v.is_finite() || v.abs() > bound {
        return Err(malformed(path, line, format!("{name} {v} out of range")));
    }
    Ok(v)
}

fn load_stops(path: &Path) -> Result<Vec<Stop>, IngestError> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::resolve(path, &headers, &["stop_id", "stop_lat", "stop_lon"], &["stop_name"])?;
    let mut seen = HashSet::new();
    let mut stops = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec);
        let stop_id = cols.get(&rec, 0);
        if stop_id.is_empty() {
            return Err(malformed(path, line, "empty stop_id"));
        }
        if !seen.insert(stop_id.to_string()) {
            return Err(malformed(path, line, format!("duplicate stop_id '{stop_id}'")));
        }
        stops.push(Stop {
            stop_id: stop_id.to_string(),
            lat: parse_coord(path, line, cols.get(&rec, 1), "stop_lat", 90.0)?,
            lon: parse_coord(path, line, cols.get(&rec, 2), "stop_lon", 180.0)?,
            name: cols.get(&rec, 3).to_string(),
        });
    }
    Ok(stops)
}

fn load_routes(path: &Path) -> Result<Vec<Route>, IngestError> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::resolve(path, &headers, &["route_id"], &[])?;
    let mut seen = HashSet::new();
    let mut routes = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let route_id = cols.get(&rec, 0);
        if route_id.is_empty() || !seen.insert(route_id.to_string()) {
            return Err(malformed(path, line_of(&rec), format!("empty or duplicate route_id '{route_id}'")));
        }
        routes.push(Route {
            route_id: route_id.to_string(),
        });
    }
    Ok(routes)
}

fn load_trips(path: &Path, routes: &HashSet<&str>) -> Result<Vec<Trip>, IngestError> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::resolve(path, &headers, &["route_id", "trip_id"], &["direction_id"])?;
    let mut seen = HashSet::new();
    let mut trips = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec);
        let route_id = cols.get(&rec, 0);
        let trip_id = cols.get(&rec, 1);
        if trip_id.is_empty() || !seen.insert(trip_id.to_string()) {
            return Err(malformed(path, line, format!("empty or duplicate trip_id '{trip_id}'")));
        }
        if !routes.contains(route_id) {
            return Err(IngestError::DanglingReference {
                file: file_label(path),
                line,
                kind: "route",
                id: route_id.to_string(),
            });
        }
        // GTFS allows an absent direction_id; such trips form direction 0.
        let direction_id = match cols.get(&rec, 2) {
            "" | "0" => 0,
            "1" => 1,
            other => return Err(malformed(path, line, format!("direction_id '{other}' not 0|1"))),
        };
        trips.push(Trip {
            route_id: route_id.to_string(),
            trip_id: trip_id.to_string(),
            direction_id,
        });
    }
    Ok(trips)
}

fn load_stop_times(
    path: &Path,
    trips: &HashSet<&str>,
    stops: &HashSet<&str>,
) -> Result<Vec<StopTime>, IngestError> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::resolve(path, &headers, &["trip_id", "stop_sequence", "stop_id"], &[])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec);
        let trip_id = cols.get(&rec, 0);
        let seq = cols.get(&rec, 1);
        let stop_id = cols.get(&rec, 2);
        if !trips.contains(trip_id) {
            return Err(IngestError::DanglingReference {
                file: file_label(path),
                line,
                kind: "trip",
                id: trip_id.to_string(),
            });
        }
        if !stops.contains(stop_id) {
            return Err(IngestError::DanglingReference {
                file: file_label(path),
                line,
                kind: "stop",
                id: stop_id.to_string(),
            });
        }
        let stop_sequence = seq
            .parse()
            .map_err(|_| malformed(path, line, format!("stop_sequence '{seq}' is not an integer")))?;
        out.push(StopTime {
            trip_id: trip_id.to_string(),
            stop_sequence,
            stop_id: stop_id.to_string(),
        });
    }
    out.sort_by(|a, b| {
        a.trip_id
            .cmp(&b.trip_id)
            .then(a.stop_sequence.cmp(&b.stop_sequence))
    });
    if let Some(w) = out
        .windows(2)
        .find(|w| w[0].trip_id == w[1].trip_id && w[0].stop_sequence == w[1].stop_sequence)
    {
        return Err(malformed(
            path,
            0,
            format!("duplicate stop_sequence {} in trip '{}'", w[0].stop_sequence, w[0].trip_id),
        ));
    }
    Ok(out)
}

/// Loads `stops.txt`, `routes.txt`, `trips.txt` and `stop_times.txt` from `dir`.
pub fn load_gtfs(dir: impl AsRef<Path>) -> Result<GtfsSnapshot, IngestError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(IngestError::MissingFile {
            path: dir.to_path_buf(),
        });
    }
    let stops = load_stops(&dir.join("stops.txt"))?;
    let routes = load_routes(&dir.join("routes.txt"))?;
    let route_ids: HashSet<&str> = routes.iter().map(|r| r.route_id.as_str()).collect();
    let trips = load_trips(&dir.join("trips.txt"), &route_ids)?;
    let trip_ids: HashSet<&str> = trips.iter().map(|t| t.trip_id.as_str()).collect();
    let stop_ids: HashSet<&str> = stops.iter().map(|s| s.stop_id.as_str()).collect();
    let stop_times = load_stop_times(&dir.join("stop_times.txt"), &trip_ids, &stop_ids)?;
    Ok(GtfsSnapshot {
        stops,
        routes,
        trips,
        stop_times,
    })
}

pub fn write_gtfs(snapshot: &GtfsSnapshot, dir: impl AsRef<Path>) -> Result<(), IngestError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| IngestError::Io {
        file: file_label(dir),
        source: e,
    })?;

    let path = dir.join("stops.txt");
    let mut w = open_writer(&path)?;
    w.write_record(["stop_id", "stop_name", "stop_lat", "stop_lon"])
        .map_err(|e| csv_error(&path, e))?;
    for s in &snapshot.stops {
        w.write_record([&s.stop_id, &s.name, &s.lat.to_string(), &s.lon.to_string()])
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| IngestError::Io { file: file_label(&path), source: e })?;

    let path = dir.join("routes.txt");
    let mut w = open_writer(&path)?;
    w.write_record(["route_id"]).map_err(|e| csv_error(&path, e))?;
    for r in &snapshot.routes {
        w.write_record([&r.route_id]).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| IngestError::Io { file: file_label(&path), source: e })?;

    let path = dir.join("trips.txt");
    let mut w = open_writer(&path)?;
    w.write_record(["route_id", "trip_id", "direction_id"])
        .map_err(|e| csv_error(&path, e))?;
    for t in &snapshot.trips {
        w.write_record([&t.route_id, &t.trip_id, &t.direction_id.to_string()])
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| IngestError::Io { file: file_label(&path), source: e })?;

    let path = dir.join("stop_times.txt");
    let mut w = open_writer(&path)?;
    w.write_record(["trip_id", "stop_sequence", "stop_id"])
        .map_err(|e| csv_error(&path, e))?;
    for st in &snapshot.stop_times {
        w.write_record([&st.trip_id, &st.stop_sequence.to_string(), &st.stop_id])
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| IngestError::Io { file: file_label(&path), source: e })?;
    Ok(())
}
