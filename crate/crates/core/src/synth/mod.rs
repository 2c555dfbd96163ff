//! Synthetic city generator with a ground-truth manifest.
//!
//! Every random stream is a ChaCha8 generator seeded with the config seed and a fixed
//! stream number per output, so adding an output never perturbs the existing ones.

mod accompaniment;
mod bulk;
mod manifest;
mod mixed;
mod names;
mod network;
mod travel;

use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::gender::{BabyNames, GenderError, NameCache};
use crate::ingest::{
    write_gtfs, write_pois, write_registrations, write_stages, CardRegistration, GtfsSnapshot, IngestError, Poi,
    PoiClass, Stage,
};
use crate::stats::{write_mixed_observations, MixedObservation, StatsError};

pub use bulk::write_bulk_stages;
pub use manifest::{
    CardCategory, CardTruth, CenterTruth, Counts, ExpectedPattern, MixedTruth, PatternTruth, PlantedBin, PlantedPair,
    PoiTruth, TruthManifest,
};
pub use mixed::{plant_mixed_observations, simulate_mixed_observations};

const STREAM_NETWORK: u64 = 1;
const STREAM_POIS: u64 = 2;
const STREAM_CARDS: u64 = 3;
const STREAM_TRAVEL: u64 = 4;
const STREAM_ACCOMPANIMENT: u64 = 5;
const STREAM_MIXED: u64 = 6;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Gender(#[from] GenderError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("cannot write manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_stops: usize,
    pub n_routes: usize,
    pub n_pois_per_class: usize,
    pub n_cards: usize,
    pub days: u32,
    pub start_date: NaiveDate,
    /// Share of cards that are frequent, registered, gendered bus riders.
    pub regular_share: f64,
    /// Women among the regular cards.
    pub regular_women_share: f64,
    /// Women's share of trips at planted POI stops during the planted window.
    pub planted_share: f64,
    pub baseline_share: f64,
    pub planted_class: PoiClass,
    /// Planted window on weekdays, seconds after midnight, half-open.
    pub planted_start: u32,
    pub planted_end: u32,
    pub alighting_coverage: f64,
    /// Bus journeys with a transfer.
    pub chain_share: f64,
    /// Transfers made at a POI stop.
    pub poi_transfer_share: f64,
    pub rail_share: f64,
    pub weekday_journeys_per_card: f64,
    /// Weekend demand relative to weekdays.
    pub weekend_damping: f64,
    /// Share of stops inside the city-center box.
    pub center_share: f64,
    pub accompaniment_pairs: usize,
    /// Weekly rates cycled through the qualifying pairs.
    pub accompaniment_rates: Vec<u32>,
    /// Women among registered accompanying cards at the lowest and highest rate.
    pub accompanying_women_low: f64,
    pub accompanying_women_high: f64,
    pub mixed_beta0: f64,
    pub mixed_beta1: f64,
    pub mixed_sigma_u2: f64,
    pub mixed_sigma_e2: f64,
    pub mixed_groups: usize,
    pub mixed_per_group: usize,
    pub mixed_flagged_per_group: usize,
}

fn hhmm(s: &str) -> Result<u32, String> {
    let (h, m) = s.split_once(':').ok_or_else(|| format!("expected HH:MM, got '{s}'"))?;
    let h: u32 = h.parse().map_err(|_| format!("bad hour in '{s}'"))?;
    let m: u32 = m.parse().map_err(|_| format!("bad minute in '{s}'"))?;
    if h > 24 || m > 59 {
        return Err(format!("time '{s}' out of range"));
    }
    Ok(h * 3600 + m * 60)
}

fn fmt_hhmm(t: u32) -> String {
    format!("{:02}:{:02}", t / 3600, t % 3600 / 60)
}

impl SynthConfig {
    pub const KEYS: [&'static str; 34] = [
        "seed",
        "n_stops",
        "n_routes",
        "n_pois_per_class",
        "n_cards",
        "days",
        "start_date",
        "regular_share",
        "regular_women_share",
        "planted_share",
        "baseline_share",
        "planted_class",
        "planted_start",
        "planted_end",
        "alighting_coverage",
        "chain_share",
        "poi_transfer_share",
        "rail_share",
        "weekday_journeys_per_card",
        "weekend_damping",
        "center_share",
        "accompaniment_pairs",
        "accompaniment_rates",
        "accompanying_women_low",
        "accompanying_women_high",
        "mixed_beta0",
        "mixed_beta1",
        "mixed_sigma_u2",
        "mixed_sigma_e2",
        "mixed_groups",
        "mixed_per_group",
        "mixed_flagged_per_group",
        "null_city",
        "out_dir",
    ];

    /// Desk-scale defaults around `seed`.
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            n_stops: 200,
            n_routes: 12,
            n_pois_per_class: 20,
            n_cards: 5000,
            days: 90,
            start_date: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            regular_share: 0.6,
            regular_women_share: 1400.0 / 3000.0,
            planted_share: 0.60,
            baseline_share: 0.50,
            planted_class: PoiClass::Daycare,
            planted_start: 6 * 3600 + 30 * 60,
            planted_end: 9 * 3600 + 30 * 60,
            alighting_coverage: 0.65,
            chain_share: 0.3,
            poi_transfer_share: 0.5,
            rail_share: 0.1,
            weekday_journeys_per_card: 1.0,
            weekend_damping: 0.5,
            center_share: 0.4,
            accompaniment_pairs: 100,
            accompaniment_rates: vec![1, 2, 3, 4, 5],
            accompanying_women_low: 0.45,
            accompanying_women_high: 0.80,
            mixed_beta0: 27.94,
            mixed_beta1: 10.11,
            mixed_sigma_u2: 514.5,
            mixed_sigma_e2: 185.3,
            mixed_groups: 500,
            mixed_per_group: 20,
            mixed_flagged_per_group: 6,
        }
    }

    /// Removes every planted gender effect.
    pub fn into_null(mut self) -> Self {
        self.planted_share = 0.5;
        self.baseline_share = 0.5;
        self.accompanying_women_low = 0.5;
        self.accompanying_women_high = 0.5;
        self
    }

    /// Reads a key-value config; `seed` is required, everything else defaults. The
    /// `null_city` key applies [`SynthConfig::into_null`] after all other keys; `out_dir`
    /// is accepted and ignored here.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, SynthError> {
        kv.check_keys(&Self::KEYS)?;
        let seed = kv
            .get::<u64>("seed")?
            .ok_or_else(|| SynthError::InvalidConfig("seed is required".into()))?;
        let d = Self::new(seed);
        let time = |key: &str, default: u32| -> Result<u32, SynthError> {
            kv.raw(key).map_or(Ok(default), |v| {
                hhmm(v).map_err(|reason| {
                    SynthError::Config(ConfigError::BadValue {
                        key: key.into(),
                        value: v.into(),
                        reason,
                    })
                })
            })
        };
        let rates = match kv.raw("accompaniment_rates") {
            None => d.accompaniment_rates.clone(),
            Some(v) => v
                .split(',')
                .map(|r| r.trim().parse::<u32>())
                .collect::<Result<_, _>>()
                .map_err(|e| ConfigError::BadValue {
                    key: "accompaniment_rates".into(),
                    value: v.into(),
                    reason: e.to_string(),
                })?,
        };
        let cfg = Self {
            seed,
            n_stops: kv.get_or("n_stops", d.n_stops)?,
            n_routes: kv.get_or("n_routes", d.n_routes)?,
            n_pois_per_class: kv.get_or("n_pois_per_class", d.n_pois_per_class)?,
            n_cards: kv.get_or("n_cards", d.n_cards)?,
            days: kv.get_or("days", d.days)?,
            start_date: kv.get_or("start_date", d.start_date)?,
            regular_share: kv.get_or("regular_share", d.regular_share)?,
            regular_women_share: kv.get_or("regular_women_share", d.regular_women_share)?,
            planted_share: kv.get_or("planted_share", d.planted_share)?,
            baseline_share: kv.get_or("baseline_share", d.baseline_share)?,
            planted_class: kv.get_or("planted_class", d.planted_class)?,
            planted_start: time("planted_start", d.planted_start)?,
            planted_end: time("planted_end", d.planted_end)?,
            alighting_coverage: kv.get_or("alighting_coverage", d.alighting_coverage)?,
            chain_share: kv.get_or("chain_share", d.chain_share)?,
            poi_transfer_share: kv.get_or("poi_transfer_share", d.poi_transfer_share)?,
            rail_share: kv.get_or("rail_share", d.rail_share)?,
            weekday_journeys_per_card: kv.get_or("weekday_journeys_per_card", d.weekday_journeys_per_card)?,
            weekend_damping: kv.get_or("weekend_damping", d.weekend_damping)?,
            center_share: kv.get_or("center_share", d.center_share)?,
            accompaniment_pairs: kv.get_or("accompaniment_pairs", d.accompaniment_pairs)?,
            accompaniment_rates: rates,
            accompanying_women_low: kv.get_or("accompanying_women_low", d.accompanying_women_low)?,
            accompanying_women_high: kv.get_or("accompanying_women_high", d.accompanying_women_high)?,
            mixed_beta0: kv.get_or("mixed_beta0", d.mixed_beta0)?,
            mixed_beta1: kv.get_or("mixed_beta1", d.mixed_beta1)?,
            mixed_sigma_u2: kv.get_or("mixed_sigma_u2", d.mixed_sigma_u2)?,
            mixed_sigma_e2: kv.get_or("mixed_sigma_e2", d.mixed_sigma_e2)?,
            mixed_groups: kv.get_or("mixed_groups", d.mixed_groups)?,
            mixed_per_group: kv.get_or("mixed_per_group", d.mixed_per_group)?,
            mixed_flagged_per_group: kv.get_or("mixed_flagged_per_group", d.mixed_flagged_per_group)?,
        };
        let cfg = if kv.get_or("null_city", false)? { cfg.into_null() } else { cfg };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical key-value form; `from_kv(to_kv())` reproduces the config.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        let rates: Vec<String> = self.accompaniment_rates.iter().map(u32::to_string).collect();
        for (k, v) in [
            ("seed", self.seed.to_string()),
            ("n_stops", self.n_stops.to_string()),
            ("n_routes", self.n_routes.to_string()),
            ("n_pois_per_class", self.n_pois_per_class.to_string()),
            ("n_cards", self.n_cards.to_string()),
            ("days", self.days.to_string()),
            ("start_date", self.start_date.to_string()),
            ("regular_share", self.regular_share.to_string()),
            ("regular_women_share", self.regular_women_share.to_string()),
            ("planted_share", self.planted_share.to_string()),
            ("baseline_share", self.baseline_share.to_string()),
            ("planted_class", self.planted_class.to_string()),
            ("planted_start", fmt_hhmm(self.planted_start)),
            ("planted_end", fmt_hhmm(self.planted_end)),
            ("alighting_coverage", self.alighting_coverage.to_string()),
            ("chain_share", self.chain_share.to_string()),
            ("poi_transfer_share", self.poi_transfer_share.to_string()),
            ("rail_share", self.rail_share.to_string()),
            ("weekday_journeys_per_card", self.weekday_journeys_per_card.to_string()),
            ("weekend_damping", self.weekend_damping.to_string()),
            ("center_share", self.center_share.to_string()),
            ("accompaniment_pairs", self.accompaniment_pairs.to_string()),
            ("accompaniment_rates", rates.join(",")),
            ("accompanying_women_low", self.accompanying_women_low.to_string()),
            ("accompanying_women_high", self.accompanying_women_high.to_string()),
            ("mixed_beta0", self.mixed_beta0.to_string()),
            ("mixed_beta1", self.mixed_beta1.to_string()),
            ("mixed_sigma_u2", self.mixed_sigma_u2.to_string()),
            ("mixed_sigma_e2", self.mixed_sigma_e2.to_string()),
            ("mixed_groups", self.mixed_groups.to_string()),
            ("mixed_per_group", self.mixed_per_group.to_string()),
            ("mixed_flagged_per_group", self.mixed_flagged_per_group.to_string()),
        ] {
            kv.set(k, v);
        }
        kv
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        for (name, v) in [
            ("regular_share", self.regular_share),
            ("regular_women_share", self.regular_women_share),
            ("planted_share", self.planted_share),
            ("baseline_share", self.baseline_share),
            ("alighting_coverage", self.alighting_coverage),
            ("chain_share", self.chain_share),
            ("poi_transfer_share", self.poi_transfer_share),
            ("rail_share", self.rail_share),
            ("weekend_damping", self.weekend_damping),
            ("center_share", self.center_share),
            ("accompanying_women_low", self.accompanying_women_low),
            ("accompanying_women_high", self.accompanying_women_high),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        if self.days < 14 {
            return bad(format!("days = {} must be at least 14", self.days));
        }
        if self.n_stops < 4 || self.n_routes == 0 {
            return bad("need at least 4 stops and 1 route".into());
        }
        if self.weekday_journeys_per_card < 0.0 || !self.weekday_journeys_per_card.is_finite() {
            return bad("weekday_journeys_per_card must be non-negative".into());
        }
        if self.planted_start >= self.planted_end {
            return bad("planted_start must precede planted_end".into());
        }
        if self.accompaniment_rates.is_empty() || self.accompaniment_rates.iter().any(|&r| r == 0 || r > 7) {
            return bad("accompaniment_rates must be weekly rates in 1..=7".into());
        }
        let regular = self.regular_cards();
        let women = self.regular_women();
        if women == 0 || women >= regular {
            return bad("regular cards need both women and men".into());
        }
        if regular + 2 * self.accompaniment_pairs > self.n_cards {
            return bad(format!(
                "{} cards cannot hold {regular} regular cards and {} accompaniment pairs",
                self.n_cards, self.accompaniment_pairs
            ));
        }
        if self.mixed_groups < 2
            || self.mixed_flagged_per_group == 0
            || self.mixed_flagged_per_group >= self.mixed_per_group
        {
            return bad("mixed model needs at least 2 groups and both flag values in every group".into());
        }
        if self.mixed_sigma_u2 < 0.0 || self.mixed_sigma_e2 <= 0.0 {
            return bad("mixed model variances must be positive".into());
        }
        Ok(())
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + chrono::Days::new(u64::from(self.days) - 1)
    }

    pub(crate) fn regular_cards(&self) -> usize {
        (self.n_cards as f64 * self.regular_share).round() as usize
    }

    pub(crate) fn regular_women(&self) -> usize {
        (self.regular_cards() as f64 * self.regular_women_share).round() as usize
    }

    pub(crate) fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Everything the generator emits, in memory.
#[derive(Debug, Clone)]
pub struct SynthCity {
    pub gtfs: GtfsSnapshot,
    pub pois: Vec<Poi>,
    /// Sorted by `(service_date, journey_id, stage_index)`.
    pub stages: Vec<Stage>,
    pub registrations: Vec<CardRegistration>,
    pub name_cache: NameCache,
    pub baby_names: BabyNames,
    pub mixed: Vec<MixedObservation>,
    pub manifest: TruthManifest,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCity, SynthError> {
    config.validate()?;
    let net = network::build(config, &mut config.rng(STREAM_NETWORK));
    let placed = network::place_pois(config, &net, &mut config.rng(STREAM_POIS));
    let pool = names::NamePool::build(&mut config.rng(STREAM_CARDS));
    let cards = names::assign_cards(config, &pool, &mut config.rng(STREAM_CARDS));
    let mut stages = travel::simulate(config, &net, &placed, &cards, &mut config.rng(STREAM_TRAVEL));
    let planted = accompaniment::simulate(config, &cards, &mut config.rng(STREAM_ACCOMPANIMENT));
    stages.extend(planted.stages);
    stages.sort_by(|a, b| {
        (a.service_date, &a.journey_id, a.stage_index).cmp(&(b.service_date, &b.journey_id, b.stage_index))
    });
    let mixed = mixed::plant_mixed_observations(config, &mut config.rng(STREAM_MIXED));
    let manifest = manifest::build(config, &net, &placed, &cards, &stages, planted.pairs, planted.expected);
    Ok(SynthCity {
        gtfs: net.gtfs,
        pois: placed.pois,
        stages,
        registrations: cards.registrations(),
        name_cache: pool.cache,
        baby_names: pool.baby_names,
        mixed,
        manifest,
    })
}

/// [`generate`] with every planted gender effect removed.
pub fn null_city(config: &SynthConfig) -> Result<SynthCity, SynthError> {
    generate(&config.clone().into_null())
}

/// Output file names under the city directory.
pub mod files {
    pub const GTFS_DIR: &str = "gtfs";
    pub const POIS: &str = "pois.csv";
    pub const STAGES: &str = "stages.csv";
    pub const REGISTRATIONS: &str = "registrations.csv";
    pub const NAME_CACHE: &str = "name_cache.csv";
    pub const BABY_NAMES: &str = "baby_names.csv";
    pub const MIXED_OBS: &str = "mixed_obs.csv";
    pub const MANIFEST: &str = "manifest.json";
}

pub fn write_city(city: &SynthCity, dir: impl AsRef<Path>) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    write_gtfs(&city.gtfs, dir.join(files::GTFS_DIR))?;
    write_pois(&city.pois, dir.join(files::POIS))?;
    write_stages(&city.stages, dir.join(files::STAGES))?;
    write_registrations(&city.registrations, dir.join(files::REGISTRATIONS))?;
    city.name_cache.save(dir.join(files::NAME_CACHE))?;
    city.baby_names.save(dir.join(files::BABY_NAMES))?;
    write_mixed_observations(&city.mixed, dir.join(files::MIXED_OBS))?;
    city.manifest.save(dir.join(files::MANIFEST))?;
    Ok(())
}
