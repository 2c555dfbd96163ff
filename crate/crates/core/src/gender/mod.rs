//! First-name based gender inference.
//!
//! Names are normalized, looked up in a local cache (populated from a remote provider and
//! from a baby-names frequency table) and assigned a label only when the majority-gender
//! probability reaches the cutoff.

mod cache;
mod normalize;
mod provider;
mod validate;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{apply_fallback, BabyNames, NameCache};
pub use normalize::normalize_name;
pub use provider::{fetch_remote, GenderProvider, HttpProvider, ProviderEntry, RetryPolicy};
pub use validate::{validate_inference, ValidationCell, ValidationReport};

use crate::csvutil::{csv_error, file_label, open_reader, open_writer, Columns};
use crate::ingest::{CardRegistration, IngestError};

pub const DEFAULT_CUTOFF: f64 = 0.51;

#[derive(Debug, Error)]
pub enum GenderError {
    #[error("gender provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("gender provider rate limit persisted after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("gender provider returned an unusable response: {0}")]
    BadResponse(String),
    #[error("cutoff {0} must lie in (0.5, 1]")]
    InvalidCutoff(f64),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GenderLabel {
    Woman,
    Man,
    Unknown,
}

impl GenderLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            GenderLabel::Woman => "woman",
            GenderLabel::Man => "man",
            GenderLabel::Unknown => "unknown",
        }
    }

    pub fn is_binary(&self) -> bool {
        !matches!(self, GenderLabel::Unknown)
    }

    pub fn swapped(&self) -> Self {
        match self {
            GenderLabel::Woman => GenderLabel::Man,
            GenderLabel::Man => GenderLabel::Woman,
            GenderLabel::Unknown => GenderLabel::Unknown,
        }
    }
}

impl fmt::Display for GenderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenderLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "woman" | "female" | "f" | "w" => Ok(GenderLabel::Woman),
            "man" | "male" | "m" => Ok(GenderLabel::Man),
            "unknown" | "" | "u" => Ok(GenderLabel::Unknown),
            other => Err(format!("unknown gender label '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    RemoteProvider,
    BabyNames,
    Manual,
}

impl RecordSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordSource::RemoteProvider => "remote_provider",
            RecordSource::BabyNames => "baby_names",
            RecordSource::Manual => "manual",
        }
    }
}

impl FromStr for RecordSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote_provider" => Ok(RecordSource::RemoteProvider),
            "baby_names" => Ok(RecordSource::BabyNames),
            "manual" => Ok(RecordSource::Manual),
            other => Err(format!("unknown record source '{other}'")),
        }
    }
}

/// Majority-gender evidence for one canonical name. `label` is the majority gender
/// reported by the source (Unknown when it had none); the cutoff is applied at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct GenderRecord {
    pub name: String,
    pub label: GenderLabel,
    pub probability: f64,
    pub count: u64,
    pub source: RecordSource,
}

/// Label for a canonical name under `cutoff`; names missing from the cache are `(Unknown, 0)`.
pub fn infer_gender(name: &str, cache: &NameCache, cutoff: f64) -> (GenderLabel, f64) {
    match cache.resolve(name) {
        None => (GenderLabel::Unknown, 0.0),
        Some(rec) if rec.label.is_binary() && rec.probability >= cutoff => (rec.label, rec.probability),
        Some(rec) => (GenderLabel::Unknown, rec.probability),
    }
}

/// Per-card inferred label.
#[derive(Debug, Clone, PartialEq)]
pub struct CardGender {
    pub card_id: String,
    pub label: GenderLabel,
    pub probability: f64,
    pub registered: bool,
}

/// Counts describing how names were resolved in one inference run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InferenceSummary {
    pub cards: u64,
    pub registered: u64,
    pub unique_names: u64,
    pub resolved_remote: u64,
    pub resolved_baby_names: u64,
    pub resolved_manual: u64,
    pub women: u64,
    pub men: u64,
    pub unknown: u64,
}

pub fn infer_cards(
    registrations: &[CardRegistration],
    cache: &NameCache,
    cutoff: f64,
) -> Result<(Vec<CardGender>, InferenceSummary), GenderError> {
    if !(cutoff > 0.5 && cutoff <= 1.0) {
        return Err(GenderError::InvalidCutoff(cutoff));
    }
    let mut summary = InferenceSummary::default();
    let mut names = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(registrations.len());
    for reg in registrations {
        summary.cards += 1;
        let canonical = reg
            .first_name_raw
            .as_deref()
            .filter(|_| reg.registered)
            .and_then(normalize_name);
        if reg.registered {
            summary.registered += 1;
        }
        let (label, probability) = match &canonical {
            Some(name) => {
                names.insert(name.clone());
                infer_gender(name, cache, cutoff)
            }
            None => (GenderLabel::Unknown, 0.0),
        };
        match label {
            GenderLabel::Woman => summary.women += 1,
            GenderLabel::Man => summary.men += 1,
            GenderLabel::Unknown => summary.unknown += 1,
        }
        out.push(CardGender {
            card_id: reg.card_id.clone(),
            label,
            probability,
            registered: reg.registered,
        });
    }
    summary.unique_names = names.len() as u64;
    for name in &names {
        if let Some(rec) = cache.resolve(name) {
            if rec.label.is_binary() && rec.probability >= cutoff {
                match rec.source {
                    RecordSource::RemoteProvider => summary.resolved_remote += 1,
                    RecordSource::BabyNames => summary.resolved_baby_names += 1,
                    RecordSource::Manual => summary.resolved_manual += 1,
                }
            }
        }
    }
    Ok((out, summary))
}

pub fn write_card_genders(cards: &[CardGender], path: impl AsRef<Path>) -> Result<(), GenderError> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    w.write_record(["card_id", "label", "probability", "registered"])
        .map_err(|e| csv_error(path, e))?;
    for c in cards {
        w.write_record([
            c.card_id.as_str(),
            c.label.as_str(),
            &c.probability.to_string(),
            if c.registered { "true" } else { "false" },
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| IngestError::Io {
        file: file_label(path),
        source: e,
    })?;
    Ok(())
}

pub fn load_card_genders(path: impl AsRef<Path>) -> Result<Vec<CardGender>, GenderError> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::resolve(path, &headers, &["card_id", "label"], &["probability", "registered"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| IngestError::MalformedRow {
            file: file_label(path),
            line,
            reason,
        };
        let probability = match cols.get(&rec, 2) {
            "" => 0.0,
            p => p.parse().map_err(|_| bad(format!("bad probability '{p}'")))?,
        };
        out.push(CardGender {
            card_id: cols.get(&rec, 0).to_string(),
            label: cols.get(&rec, 1).parse().map_err(bad)?,
            probability,
            registered: matches!(cols.get(&rec, 3), "true" | "1" | ""),
        });
    }
    Ok(out)
}
