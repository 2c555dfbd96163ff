use std::collections::BTreeSet;
use std::path::PathBuf;

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use crate::cohort::{DEFAULT_MIN_DAYS, DEFAULT_RESAMPLES};
use crate::config::{ConfigError, KvConfig};
use crate::mocgeo::CenterBox;
use crate::netgeo::DEFAULT_RADIUS_M;
use crate::stats::{MAX_IN_VEHICLE_MIN, MAX_SPEED_MPH};
use crate::synth::files;

pub const DEFAULT_CUTOFF: f64 = 0.51;
pub const DEFAULT_SEED: u64 = 1;

/// Effective pipeline settings after the file, flag and default layers are merged.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub gtfs_dir: PathBuf,
    pub pois: PathBuf,
    pub stages: PathBuf,
    pub registrations: PathBuf,
    pub name_cache: PathBuf,
    pub baby_names: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub provider_url: Option<String>,
    pub api_key: Option<String>,
    pub cutoff: f64,
    pub radius_m: f64,
    pub min_days: u32,
    pub sample_seed: u64,
    pub resamples: usize,
    pub center_bbox: Option<CenterBox>,
    pub excluded_dates: BTreeSet<NaiveDate>,
    pub analyze_moc: bool,
    pub analyze_accompaniment: bool,
    pub run_stats: bool,
    pub stability: bool,
    /// Journeys drawn for the mixed model; `None` keeps all.
    pub sample_n: Option<usize>,
    pub stats_seed: u64,
    pub max_speed_mph: f64,
    pub max_in_vehicle_min: f64,
    /// Worker cap; 0 lets the runtime decide.
    pub threads: usize,
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 26] = [
        "city_dir",
        "gtfs_dir",
        "pois",
        "stages",
        "registrations",
        "name_cache",
        "baby_names",
        "out_dir",
        "provider_url",
        "api_key",
        "cutoff",
        "radius_m",
        "min_days",
        "sample_seed",
        "resamples",
        "center_bbox",
        "excluded_dates",
        "analyze_moc",
        "analyze_accompaniment",
        "run_stats",
        "stability",
        "sample_n",
        "stats_seed",
        "max_speed_mph",
        "max_in_vehicle_min",
        "threads",
    ];

    /// Reads the merged key-value layers. `city_dir` points every input at a directory
    /// written by the synthetic city generator; explicit path keys still win.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, ConfigError> {
        kv.check_keys(&Self::KEYS)?;
        let city: Option<PathBuf> = kv.raw("city_dir").map(PathBuf::from);
        let path = |key: &str, city_file: &str| -> Result<PathBuf, ConfigError> {
            match (kv.raw(key), &city) {
                (Some(v), _) => Ok(PathBuf::from(v)),
                (None, Some(c)) => Ok(c.join(city_file)),
                (None, None) => Err(ConfigError::BadValue {
                    key: key.into(),
                    value: String::new(),
                    reason: "required (or set city_dir)".into(),
                }),
            }
        };
        let baby_names = match (kv.raw("baby_names"), &city) {
            (Some(""), _) => None,
            (Some(v), _) => Some(PathBuf::from(v)),
            (None, Some(c)) => Some(c.join(files::BABY_NAMES)),
            (None, None) => None,
        };
        let nonempty = |key: &str| kv.raw(key).filter(|v| !v.is_empty()).map(str::to_string);
        let excluded_dates = match kv.raw("excluded_dates") {
            None | Some("") => BTreeSet::new(),
            Some(v) => v
                .split(',')
                .map(|d| {
                    NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").map_err(|e| ConfigError::BadValue {
                        key: "excluded_dates".into(),
                        value: v.into(),
                        reason: e.to_string(),
                    })
                })
                .collect::<Result<_, _>>()?,
        };
        let sample_n: usize = kv.get_or("sample_n", 0)?;
        Ok(Self {
            gtfs_dir: path("gtfs_dir", files::GTFS_DIR)?,
            pois: path("pois", files::POIS)?,
            stages: path("stages", files::STAGES)?,
            registrations: path("registrations", files::REGISTRATIONS)?,
            name_cache: path("name_cache", files::NAME_CACHE)?,
            baby_names,
            out_dir: PathBuf::from(kv.raw("out_dir").unwrap_or("reports")),
            provider_url: nonempty("provider_url"),
            api_key: nonempty("api_key"),
            cutoff: kv.get_or("cutoff", DEFAULT_CUTOFF)?,
            radius_m: kv.get_or("radius_m", DEFAULT_RADIUS_M)?,
            min_days: kv.get_or("min_days", DEFAULT_MIN_DAYS)?,
            sample_seed: kv.get_or("sample_seed", DEFAULT_SEED)?,
            resamples: kv.get_or("resamples", DEFAULT_RESAMPLES)?,
            center_bbox: match kv.raw("center_bbox") {
                None | Some("") => None,
                Some(_) => kv.get("center_bbox")?,
            },
            excluded_dates,
            analyze_moc: kv.get_or("analyze_moc", true)?,
            analyze_accompaniment: kv.get_or("analyze_accompaniment", true)?,
            run_stats: kv.get_or("run_stats", true)?,
            stability: kv.get_or("stability", true)?,
            sample_n: (sample_n > 0).then_some(sample_n),
            stats_seed: kv.get_or("stats_seed", DEFAULT_SEED)?,
            max_speed_mph: kv.get_or("max_speed_mph", MAX_SPEED_MPH)?,
            max_in_vehicle_min: kv.get_or("max_in_vehicle_min", MAX_IN_VEHICLE_MIN)?,
            threads: kv.get_or("threads", 0)?,
        })
    }

    /// Canonical key-value form of every setting that can change a report's content. The
    /// output directory, API key and worker count are left out.
    pub fn canonical(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        let p = |p: &PathBuf| p.display().to_string();
        let dates: Vec<String> = self.excluded_dates.iter().map(NaiveDate::to_string).collect();
        for (k, v) in [
            ("gtfs_dir", p(&self.gtfs_dir)),
            ("pois", p(&self.pois)),
            ("stages", p(&self.stages)),
            ("registrations", p(&self.registrations)),
            ("name_cache", p(&self.name_cache)),
            ("baby_names", self.baby_names.as_ref().map(p).unwrap_or_default()),
            ("provider_url", self.provider_url.clone().unwrap_or_default()),
            ("cutoff", self.cutoff.to_string()),
            ("radius_m", self.radius_m.to_string()),
            ("min_days", self.min_days.to_string()),
            ("sample_seed", self.sample_seed.to_string()),
            ("resamples", self.resamples.to_string()),
            ("center_bbox", self.center_bbox.map(|b| b.to_string()).unwrap_or_default()),
            ("excluded_dates", dates.join(",")),
            ("analyze_moc", self.analyze_moc.to_string()),
            ("analyze_accompaniment", self.analyze_accompaniment.to_string()),
            ("run_stats", self.run_stats.to_string()),
            ("stability", self.stability.to_string()),
            ("sample_n", self.sample_n.unwrap_or(0).to_string()),
            ("stats_seed", self.stats_seed.to_string()),
            ("max_speed_mph", self.max_speed_mph.to_string()),
            ("max_in_vehicle_min", self.max_in_vehicle_min.to_string()),
        ] {
            kv.set(k, v);
        }
        kv
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
