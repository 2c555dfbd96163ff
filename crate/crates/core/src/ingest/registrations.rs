use std::collections::HashSet;
use std::path::Path;

use super::{CardRegistration, IngestError};
use crate::csvutil::{csv_error, file_label, open_reader, open_writer, Columns};

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "y" => Some(true),
        "false" | "0" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Reads `card_id,first_name,registered`.
pub fn load_registrations(path: impl AsRef<Path>) -> Result<Vec<CardRegistration>, IngestError> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::resolve(path, &headers, &["card_id", "first_name", "registered"], &[])?;
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
        let card_id = cols.get(&rec, 0);
        if card_id.is_empty() || !seen.insert(card_id.to_string()) {
            return Err(malformed(format!("empty or duplicate card_id '{card_id}'")));
        }
        let registered = parse_bool(cols.get(&rec, 2))
            .ok_or_else(|| malformed(format!("registered '{}' is not a boolean", cols.get(&rec, 2))))?;
        // Raw names keep their original spacing; normalization happens in the gender stage.
        let raw = rec
            .get(headers.iter().position(|h| h.trim() == "first_name").unwrap_or(1))
            .unwrap_or("");
        let first_name_raw = (!raw.is_empty()).then(|| raw.to_string());
        if first_name_raw.is_some() && !registered {
            return Err(malformed("first_name present on an unregistered card".into()));
        }
        out.push(CardRegistration {
            card_id: card_id.to_string(),
            first_name_raw,
            registered,
        });
    }
    Ok(out)
}

pub fn write_registrations(regs: &[CardRegistration], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    w.write_record(["card_id", "first_name", "registered"])
        .map_err(|e| csv_error(path, e))?;
    for r in regs {
        w.write_record([
            r.card_id.as_str(),
            r.first_name_raw.as_deref().unwrap_or(""),
            if r.registered { "true" } else { "false" },
        ])
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
    fn round_trip_keeps_raw_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("registrations.csv");
        let regs = vec![
            CardRegistration { card_id: "c1".into(), first_name_raw: Some("  mARy ann ".into()), registered: true },
            CardRegistration { card_id: "c2".into(), first_name_raw: None, registered: false },
            CardRegistration { card_id: "c3".into(), first_name_raw: None, registered: true },
        ];
        write_registrations(&regs, &p).unwrap();
        assert_eq!(load_registrations(&p).unwrap(), regs);
    }

    #[test]
    fn name_on_unregistered_card_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("registrations.csv");
        std::fs::write(&p, "card_id,first_name,registered\nc1,Ann,false\n").unwrap();
        assert!(matches!(load_registrations(&p), Err(IngestError::MalformedRow { line: 2, .. })));
    }
}
