use std::collections::HashSet;
use std::path::Path;

use super::{IngestError, Poi, PoiClass};
use crate::csvutil::{csv_error, file_label, open_reader, open_writer, Columns};

/// Reads a `poi_id,class,lat,lon` registry.
pub fn load_pois(path: impl AsRef<Path>) -> Result<Vec<Poi>, IngestError> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::resolve(path, &headers, &["poi_id", "class", "lat", "lon"], &[])?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |reason: String| IngestError::MalformedRow {
            file: file_label(path),
            line,
            reason,
        };
        let poi_id = cols.get(&rec, 0);
        if poi_id.is_empty() || !seen.insert(poi_id.to_string()) {
            return Err(malformed(format!("empty or duplicate poi_id '{poi_id}'")));
        }
        let class: PoiClass = cols.get(&rec, 1).parse().map_err(|value| IngestError::UnknownClass {
            file: file_label(path),
            line,
            value,
        })?;
        let lat: f64 = cols
            .get(&rec, 2)
            .parse()
            .map_err(|_| malformed("lat is not a number".into()))?;
        let lon: f64 = cols
            .get(&rec, 3)
            .parse()
            .map_err(|_| malformed("lon is not a number".into()))?;
        if !(lat.abs() <= 90.0 && lon.abs() <= 180.0) {
            return Err(malformed(format!("coordinates ({lat}, {lon}) out of range")));
        }
        out.push(Poi {
            poi_id: poi_id.to_string(),
            class,
            lat,
            lon,
        });
    }
    Ok(out)
}

pub fn write_pois(pois: &[Poi], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    w.write_record(["poi_id", "class", "lat", "lon"])
        .map_err(|e| csv_error(path, e))?;
    for p in pois {
        w.write_record([&p.poi_id, p.class.as_str(), &p.lat.to_string(), &p.lon.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| IngestError::Io {
        file: file_label(path),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pois.csv");
        std::fs::write(&p, "poi_id,class,lat,lon\n").unwrap();
        assert!(load_pois(&p).unwrap().is_empty());
    }

    #[test]
    fn hospital_is_unknown_class() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pois.csv");
        std::fs::write(&p, "poi_id,class,lat,lon\nP1,daycare,38.9,-77\nP2,Hospital,38.9,-77\n").unwrap();
        match load_pois(&p) {
            Err(IngestError::UnknownClass { value, line, .. }) => {
                assert_eq!(value, "Hospital");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pois.csv");
        let pois = vec![
            Poi { poi_id: "a".into(), class: PoiClass::School, lat: 38.912345678901, lon: -77.01 },
            Poi { poi_id: "b".into(), class: PoiClass::Grocery, lat: -1.5, lon: 179.9999 },
        ];
        write_pois(&pois, &p).unwrap();
        assert_eq!(load_pois(&p).unwrap(), pois);
    }
}
