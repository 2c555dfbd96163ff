use std::collections::BTreeMap;
use std::path::Path;

use super::{normalize_name, GenderError, GenderLabel, GenderRecord, RecordSource};
use crate::csvutil::{csv_error, file_label, open_reader, open_writer, Columns};
use crate::ingest::IngestError;

/// Immutable name → evidence snapshot keyed by `(name, source)`.
///
/// Updates produce a new snapshot via [`NameCache::merged`]; readers never observe a
/// partially-updated cache.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NameCache {
    entries: BTreeMap<(String, RecordSource), GenderRecord>,
}

impl NameCache {
    pub fn from_records(records: impl IntoIterator<Item = GenderRecord>) -> Self {
        Self::default().merged(records)
    }

    /// Last writer wins per `(name, source)`.
    pub fn merged(&self, records: impl IntoIterator<Item = GenderRecord>) -> Self {
        let mut entries = self.entries.clone();
        for r in records {
            entries.insert((r.name.clone(), r.source), r);
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &GenderRecord> {
        self.entries.values()
    }

    pub fn get(&self, name: &str, source: RecordSource) -> Option<&GenderRecord> {
        self.entries.get(&(name.to_string(), source))
    }

    /// Best evidence for `name`: manual overrides first, then the remote provider, then
    /// the baby-names fallback; records without a majority gender are used last.
    pub fn resolve(&self, name: &str) -> Option<&GenderRecord> {
        const ORDER: [RecordSource; 3] = [
            RecordSource::Manual,
            RecordSource::RemoteProvider,
            RecordSource::BabyNames,
        ];
        let candidates: Vec<&GenderRecord> = ORDER.iter().filter_map(|s| self.get(name, *s)).collect();
        candidates
            .iter()
            .find(|r| r.label.is_binary() || r.source == RecordSource::Manual)
            .or_else(|| candidates.first())
            .copied()
    }

    /// Names without a binary label get a baby-names record when the table knows them.
    pub fn with_fallback<'a>(&self, names: impl IntoIterator<Item = &'a str>, table: &BabyNames) -> Self {
        let pending: Vec<GenderRecord> = names
            .into_iter()
            .filter(|n| self.resolve(n).is_none_or(|r| !r.label.is_binary()))
            .map(|n| GenderRecord {
                name: n.to_string(),
                label: GenderLabel::Unknown,
                probability: 0.0,
                count: 0,
                source: RecordSource::BabyNames,
            })
            .collect();
        let filled = apply_fallback(pending, table)
            .into_iter()
            .filter(|r| r.label.is_binary() || r.count > 0);
        self.merged(filled)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GenderError> {
        let path = path.as_ref();
        let mut rdr = open_reader(path)?;
        let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        let cols = Columns::resolve(path, &headers, &["name", "label", "probability", "count", "source"], &[])?;
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |reason: String| {
                GenderError::Ingest(IngestError::MalformedRow {
                    file: file_label(path),
                    line,
                    reason,
                })
            };
            let name = cols.get(&rec, 0);
            if name.is_empty() {
                return Err(bad("empty name".into()));
            }
            let probability: f64 = cols
                .get(&rec, 2)
                .parse()
                .map_err(|_| bad("probability is not a number".into()))?;
            if !(0.0..=1.0).contains(&probability) {
                return Err(bad(format!("probability {probability} outside [0, 1]")));
            }
            records.push(GenderRecord {
                name: name.to_string(),
                label: cols.get(&rec, 1).parse().map_err(bad)?,
                probability,
                count: cols
                    .get(&rec, 3)
                    .parse()
                    .map_err(|_| bad("count is not a non-negative integer".into()))?,
                source: cols.get(&rec, 4).parse().map_err(bad)?,
            });
        }
        Ok(Self::from_records(records))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GenderError> {
        let path = path.as_ref();
        let mut w = open_writer(path)?;
        w.write_record(["name", "label", "probability", "count", "source"])
            .map_err(|e| csv_error(path, e))?;
        for r in self.entries.values() {
            w.write_record([
                r.name.as_str(),
                r.label.as_str(),
                &r.probability.to_string(),
                &r.count.to_string(),
                r.source.as_str(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| {
            GenderError::Ingest(IngestError::Io {
                file: file_label(path),
                source: e,
            })
        })
    }
}

/// Baby-names frequency table, summed over all years per canonical name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BabyNames {
    counts: BTreeMap<String, (u64, u64)>,
}

impl BabyNames {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = (&'a str, GenderLabel, u64)>) -> Self {
        let mut counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for (raw, gender, n) in rows {
            let Some(name) = normalize_name(raw) else { continue };
            let slot = counts.entry(name).or_default();
            match gender {
                GenderLabel::Woman => slot.0 += n,
                GenderLabel::Man => slot.1 += n,
                GenderLabel::Unknown => {}
            }
        }
        Self { counts }
    }

    /// `(women, men)` totals.
    pub fn counts(&self, name: &str) -> Option<(u64, u64)> {
        self.counts.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Reads `name,gender,count` rows (an optional `year` column is ignored).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GenderError> {
        let path = path.as_ref();
        let mut rdr = open_reader(path)?;
        let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        let cols = Columns::resolve(path, &headers, &["name", "gender", "count"], &[])?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |reason: String| {
                GenderError::Ingest(IngestError::MalformedRow {
                    file: file_label(path),
                    line,
                    reason,
                })
            };
            let gender: GenderLabel = cols.get(&rec, 1).parse().map_err(bad)?;
            let count: u64 = cols
                .get(&rec, 2)
                .parse()
                .map_err(|_| bad("count is not a non-negative integer".into()))?;
            rows.push((cols.get(&rec, 0).to_string(), gender, count));
        }
        Ok(Self::from_rows(rows.iter().map(|(n, g, c)| (n.as_str(), *g, *c))))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GenderError> {
        let path = path.as_ref();
        let mut w = open_writer(path)?;
        w.write_record(["name", "gender", "count"]).map_err(|e| csv_error(path, e))?;
        for (name, (women, men)) in &self.counts {
            for (label, n) in [("F", women), ("M", men)] {
                if *n > 0 {
                    w.write_record([name.as_str(), label, &n.to_string()])
                        .map_err(|e| csv_error(path, e))?;
                }
            }
        }
        w.flush().map_err(|e| {
            GenderError::Ingest(IngestError::Io {
                file: file_label(path),
                source: e,
            })
        })
    }
}

/// Fills Unknown records from the baby-names table; labeled records pass through untouched.
///
/// The fallback probability is the majority count over the name's total count; an exact
/// tie keeps the label Unknown.
pub fn apply_fallback(records: Vec<GenderRecord>, table: &BabyNames) -> Vec<GenderRecord> {
    records
        .into_iter()
        .map(|r| {
            if r.label.is_binary() {
                return r;
            }
            let Some((women, men)) = table.counts(&r.name) else {
                return r;
            };
            let total = women + men;
            if total == 0 {
                return r;
            }
            let (label, majority) = match women.cmp(&men) {
                std::cmp::Ordering::Greater => (GenderLabel::Woman, women),
                std::cmp::Ordering::Less => (GenderLabel::Man, men),
                std::cmp::Ordering::Equal => (GenderLabel::Unknown, women),
            };
            GenderRecord {
                name: r.name,
                label,
                probability: majority as f64 / total as f64,
                count: total,
                source: RecordSource::BabyNames,
            }
        })
        .collect()
}
