//! Active-user filtering and the gender-balanced analysis sample.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::csvutil::{csv_error, file_label, open_reader, open_writer, Columns};
use crate::gender::{CardGender, GenderLabel};
use crate::ingest::{IngestError, Mode, Stage};

pub const DEFAULT_MIN_DAYS: u32 = 10;
pub const DEFAULT_RESAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("min_days must be at least 1")]
    InvalidMinDays,
    #[error("no {0} cards to sample from")]
    MissingLabel(GenderLabel),
    #[error("resample_stability needs at least 2 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CardProfile {
    pub card_id: String,
    pub gender: GenderLabel,
    pub active_days: u32,
    pub registered: bool,
    /// At least one bus stage.
    pub on_bus: bool,
}

/// Streams stages and remembers, per card, the distinct service dates and whether any
/// stage was a bus boarding.
#[derive(Debug, Default)]
pub struct ActivityCounter {
    cards: HashMap<String, (BTreeSet<NaiveDate>, bool)>,
    stages: u64,
}

impl ActivityCounter {
    pub fn observe(&mut self, stage: &Stage) {
        self.stages += 1;
        let entry = match self.cards.get_mut(&stage.card_id) {
            Some(e) => e,
            None => self.cards.entry(stage.card_id.clone()).or_default(),
        };
        entry.0.insert(stage.service_date);
        entry.1 |= stage.mode == Mode::Bus;
    }

    pub fn stages(&self) -> u64 {
        self.stages
    }

    /// Joins activity with inferred genders. Cards that only appear in one of the two
    /// inputs are kept: missing activity means zero active days, a missing gender means
    /// an unregistered Unknown card.
    pub fn profiles(&self, genders: &[CardGender]) -> Vec<CardProfile> {
        let by_card: HashMap<&str, &CardGender> = genders.iter().map(|g| (g.card_id.as_str(), g)).collect();
        let mut ids: BTreeSet<&str> = self.cards.keys().map(String::as_str).collect();
        ids.extend(by_card.keys().copied());
        ids.into_iter()
            .map(|id| {
                let (days, on_bus) = self
                    .cards
                    .get(id)
                    .map(|(d, b)| (d.len() as u32, *b))
                    .unwrap_or((0, false));
                let g = by_card.get(id);
                CardProfile {
                    card_id: id.to_string(),
                    gender: g.map(|g| g.label).unwrap_or(GenderLabel::Unknown),
                    active_days: days,
                    registered: g.is_some_and(|g| g.registered),
                    on_bus,
                }
            })
            .collect()
    }
}

pub fn build_profiles<'a>(stages: impl IntoIterator<Item = &'a Stage>, genders: &[CardGender]) -> Vec<CardProfile> {
    let mut counter = ActivityCounter::default();
    for s in stages {
        counter.observe(s);
    }
    counter.profiles(genders)
}

pub fn filter_active(profiles: &[CardProfile], min_days: u32) -> Result<Vec<CardProfile>, CohortError> {
    if min_days == 0 {
        return Err(CohortError::InvalidMinDays);
    }
    Ok(profiles.iter().filter(|p| p.active_days >= min_days).cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalancedSample {
    pub seed: u64,
    /// Sorted.
    pub women: Vec<String>,
    /// Sorted.
    pub men: Vec<String>,
    /// Fewer men than women were available; every man is kept and the sample is unequal.
    pub insufficient_men: bool,
}

impl BalancedSample {
    /// `(card_id, label)` for every sampled card, sorted by card id.
    pub fn labeled(&self) -> Vec<(String, GenderLabel)> {
        let mut out: Vec<(String, GenderLabel)> = self
            .women
            .iter()
            .map(|c| (c.clone(), GenderLabel::Woman))
            .chain(self.men.iter().map(|c| (c.clone(), GenderLabel::Man)))
            .collect();
        out.sort();
        out
    }

    pub fn label_map(&self) -> HashMap<String, GenderLabel> {
        self.labeled().into_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.women.len() + self.men.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Keeps every woman-labeled card and an equally sized uniform draw, without
/// replacement, of man-labeled cards. Unknown cards are excluded.
pub fn balance_sample(profiles: &[CardProfile], seed: u64) -> Result<BalancedSample, CohortError> {
    let mut women: Vec<String> = Vec::new();
    let mut men: Vec<String> = Vec::new();
    for p in profiles {
        match p.gender {
            GenderLabel::Woman => women.push(p.card_id.clone()),
            GenderLabel::Man => men.push(p.card_id.clone()),
            GenderLabel::Unknown => {}
        }
    }
    if women.is_empty() {
        return Err(CohortError::MissingLabel(GenderLabel::Woman));
    }
    if men.is_empty() {
        return Err(CohortError::MissingLabel(GenderLabel::Man));
    }
    women.sort();
    men.sort();
    let insufficient_men = men.len() < women.len();
    if insufficient_men {
        log::warn!(
            "only {} men for {} women; keeping all men, sample is imbalanced",
            men.len(),
            women.len()
        );
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, men.len(), women.len()).into_vec();
        picked.sort_unstable();
        men = picked.into_iter().map(|i| std::mem::take(&mut men[i])).collect();
    }
    Ok(BalancedSample {
        seed,
        women,
        men,
        insufficient_men,
    })
}

/// Seeds `base, base+1, ..., base+k-1`.
pub fn default_seeds(base: u64, k: usize) -> Vec<u64> {
    (0..k as u64).map(|i| base.wrapping_add(i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityBin {
    pub bin: usize,
    /// Runs in which the metric was defined for this bin.
    pub runs: usize,
    pub mean: Option<f64>,
    /// Max minus min across runs.
    pub spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub seeds: Vec<u64>,
    pub bins: Vec<StabilityBin>,
    pub max_spread: f64,
}

/// Draws one balanced sample per seed, evaluates `metric` (one optional value per bin) on
/// each and summarizes the per-bin dispersion across runs.
pub fn resample_stability<F>(profiles: &[CardProfile], seeds: &[u64], metric: F) -> Result<StabilityReport, CohortError>
where
    F: Fn(&BalancedSample) -> Vec<Option<f64>> + Sync,
{
    if seeds.len() < 2 {
        return Err(CohortError::TooFewSeeds(seeds.len()));
    }
    let runs: Vec<Vec<Option<f64>>> = seeds
        .par_iter()
        .map(|&seed| balance_sample(profiles, seed).map(|s| metric(&s)))
        .collect::<Result<_, _>>()?;
    let n_bins = runs.iter().map(Vec::len).max().unwrap_or(0);
    let bins: Vec<StabilityBin> = (0..n_bins)
        .map(|bin| {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r.get(bin).copied().flatten()).collect();
            let (lo, hi) = vals
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            StabilityBin {
                bin,
                runs: vals.len(),
                mean: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                spread: (!vals.is_empty()).then_some(hi - lo),
            }
        })
        .collect();
    let max_spread = bins.iter().filter_map(|b| b.spread).fold(0.0, f64::max);
    Ok(StabilityReport {
        seeds: seeds.to_vec(),
        bins,
        max_spread,
    })
}

/// Funnel counts before and after each cohort filter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CohortFunnel {
    pub cards: u64,
    pub active: u64,
    pub on_bus: u64,
    pub gendered: u64,
    pub sampled: u64,
}

/// Full cohort selection: activity filter, bus filter, then balanced sampling.
pub fn select_cohort(
    profiles: &[CardProfile],
    min_days: u32,
    seed: u64,
) -> Result<(BalancedSample, CohortFunnel), CohortError> {
    let active = filter_active(profiles, min_days)?;
    let on_bus: Vec<CardProfile> = active.iter().filter(|p| p.on_bus).cloned().collect();
    let gendered = on_bus.iter().filter(|p| p.gender.is_binary()).count() as u64;
    let sample = balance_sample(&on_bus, seed)?;
    let funnel = CohortFunnel {
        cards: profiles.len() as u64,
        active: active.len() as u64,
        on_bus: on_bus.len() as u64,
        gendered,
        sampled: sample.len() as u64,
    };
    Ok((sample, funnel))
}

/// The bus-riding, sufficiently active cards that `select_cohort` samples from.
pub fn eligible(profiles: &[CardProfile], min_days: u32) -> Result<Vec<CardProfile>, CohortError> {
    Ok(filter_active(profiles, min_days)?.into_iter().filter(|p| p.on_bus).collect())
}

pub fn write_sample(sample: &BalancedSample, path: impl AsRef<Path>) -> Result<(), CohortError> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    w.write_record(["card_id", "gender"]).map_err(|e| csv_error(path, e))?;
    for (card, label) in sample.labeled() {
        w.write_record([card.as_str(), label.as_str()]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| IngestError::Io {
        file: file_label(path),
        source: e,
    })?;
    Ok(())
}

/// Reads a sample file back as a card → label map.
pub fn load_sample(path: impl AsRef<Path>) -> Result<BTreeMap<String, GenderLabel>, CohortError> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::resolve(path, &headers, &["card_id", "gender"], &[])?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let label: GenderLabel = cols.get(&rec, 1).parse().map_err(|reason| IngestError::MalformedRow {
            file: file_label(path),
            line,
            reason,
        })?;
        if !label.is_binary() {
            return Err(IngestError::MalformedRow {
                file: file_label(path),
                line,
                reason: "sampled cards must be woman or man".into(),
            }
            .into());
        }
        out.insert(cols.get(&rec, 0).to_string(), label);
    }
    Ok(out)
}
