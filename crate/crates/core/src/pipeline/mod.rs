//! End-to-end batch run: ingest, gender inference, stop matching, cohort selection and the
//! mobility-of-care, accompaniment and statistics reports.

mod config;
mod reports;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use config::{PipelineConfig, DEFAULT_CUTOFF, DEFAULT_SEED};
pub use reports::{read_contingency, read_two_samples, write_buffer_sensitivity, write_chi_square, write_mixed_fit, write_stability, write_welch};

use crate::accompany::{self, AccompanimentTotals, HourCounts, Tap, HIGH_RATE_MIN, LOW_RATE_MAX};
use crate::cohort::{self, CohortFunnel, StabilityReport};
use crate::gender::{
    fetch_remote, infer_cards, normalize_name, write_card_genders, BabyNames, CardGender, GenderError, GenderLabel,
    HttpProvider, InferenceSummary, NameCache, RetryPolicy,
};
use crate::ingest::{
    assemble_journeys, load_gtfs, load_pois, load_registrations, load_stages, CardRegistration, DayType,
    ErrorPolicy, GtfsSnapshot, IngestError, Journey, Mode, Poi, PoiClass, Stage, Stop,
};
use crate::mocgeo::{
    tag_case1, write_flow_stats, write_parity_series, write_percentiles, Area, Case, CenterBox, MocAnalyzer,
    MocConfig, MocReport, Scope, StopClassIndex, Target,
};
use crate::netgeo::{
    build_patterns, buffer_sensitivity, mean_nearest_distance, nearest_stops, NetgeoError, PoiStopSets,
    SENSITIVITY_THRESHOLDS_M,
};
use crate::stats::{
    chi_square, fit_random_intercept, moc_convenience, welch_t, ChiSquareResult, ContingencyTable,
    ConvenienceOptions, MixedModelFit, StatsError, WelchResult,
};

/// Report file names under the output directory.
pub mod outputs {
    pub const CARD_GENDERS: &str = "card_genders.csv";
    pub const POI_STOPS: &str = "poi_stops.csv";
    pub const BUFFER_SENSITIVITY: &str = "buffer_sensitivity.csv";
    pub const SAMPLE: &str = "sample.csv";
    pub const STABILITY: &str = "stability.csv";
    pub const EVENTS: &str = "events.csv";
    pub const PATTERNS: &str = "patterns.csv";
    pub const HOURLY: &str = "hourly_density.csv";
    pub const GENDER_VS_RATE: &str = "gender_vs_rate.csv";
    pub const FARE_BREAKDOWN: &str = "fare_breakdown.csv";
    pub const CHI_SQUARE: &str = "chi_square.csv";
    pub const WELCH: &str = "welch.csv";
    pub const MIXED: &str = "mixed_model.csv";
    pub const RUN_REPORT: &str = "run_report.json";
    pub const RUN_TIMINGS: &str = "run_timings.json";

    pub const PARITY_SERIES: &str = "parity_series.csv";
    pub const PERCENTILES: &str = "percentiles.csv";
    pub const FLOW_STATS: &str = "flow_stats.csv";

    /// Subdirectory holding the mobility-of-care reports of one case.
    pub fn case_dir(case: crate::mocgeo::Case) -> String {
        format!("moc_case{case}")
    }
}

/// A fatal error, attributed to the stage that raised it.
#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

fn at<E: std::error::Error + Send + Sync + 'static>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        source: Box::new(e),
    }
}

/// Caps the global worker pool. Only the first call in a process takes effect.
pub fn configure_threads(threads: usize) {
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::debug!("worker pool already configured: {e}");
        }
    }
}

pub struct Inputs {
    pub gtfs: GtfsSnapshot,
    pub pois: Vec<Poi>,
    pub registrations: Vec<CardRegistration>,
    pub journeys: Vec<Journey>,
}

impl Inputs {
    pub fn stages(&self) -> impl Iterator<Item = &Stage> {
        self.journeys.iter().flat_map(|j| j.stages.iter())
    }
}

/// Reads every stage into journeys; a malformed row is fatal.
pub fn load_journeys(path: impl AsRef<Path>) -> Result<Vec<Journey>, IngestError> {
    let stages = load_stages(path, ErrorPolicy::Fatal)?.collect::<Result<Vec<_>, _>>()?;
    assemble_journeys(stages)
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs, IngestError> {
    Ok(Inputs {
        gtfs: load_gtfs(&cfg.gtfs_dir)?,
        pois: load_pois(&cfg.pois)?,
        registrations: load_registrations(&cfg.registrations)?,
        journeys: load_journeys(&cfg.stages)?,
    })
}

/// Where a name cache came from and whether the remote refresh worked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CacheNote {
    pub remote_queried: u64,
    pub remote_error: Option<String>,
}

/// Loads the cache, optionally refreshes names it lacks from a remote provider, then fills
/// gaps from the baby-names table and infers a label per card.
pub fn infer_genders(
    registrations: &[CardRegistration],
    cache_path: &Path,
    baby_names: Option<&Path>,
    provider: Option<(&str, Option<&str>)>,
    cutoff: f64,
) -> Result<(Vec<CardGender>, InferenceSummary, CacheNote), GenderError> {
    let mut cache = NameCache::load(cache_path)?;
    let names: BTreeSet<String> = registrations
        .iter()
        .filter(|r| r.registered)
        .filter_map(|r| r.first_name_raw.as_deref().and_then(normalize_name))
        .collect();
    let mut note = CacheNote::default();
    if let Some((url, key)) = provider {
        let missing: BTreeSet<String> = names.iter().filter(|n| cache.resolve(n).is_none()).cloned().collect();
        note.remote_queried = missing.len() as u64;
        let client = HttpProvider::new(url, key.map(str::to_string));
        match fetch_remote(&missing, &client, &RetryPolicy::default()) {
            Ok(records) => cache = cache.merged(records),
            Err(e) => {
                log::warn!("remote gender provider failed, using local sources only: {e}");
                note.remote_error = Some(e.to_string());
            }
        }
    }
    if let Some(path) = baby_names {
        let table = BabyNames::load(path)?;
        cache = cache.with_fallback(names.iter().map(String::as_str), &table);
    }
    let (genders, summary) = infer_cards(registrations, &cache, cutoff)?;
    Ok((genders, summary, note))
}

pub fn poi_stop_sets(gtfs: &GtfsSnapshot, pois: &[Poi], radius_m: f64) -> Result<PoiStopSets, NetgeoError> {
    nearest_stops(pois, &build_patterns(gtfs), &gtfs.stops, radius_m)
}

pub fn analyze_moc<'a>(
    stages: impl IntoIterator<Item = &'a Stage>,
    index: &StopClassIndex,
    labels: &HashMap<String, GenderLabel>,
    stops: &[Stop],
    config: MocConfig,
) -> MocReport {
    let mut analyzer = MocAnalyzer::new(config, index, labels, stops);
    for s in stages {
        analyzer.observe(s);
    }
    analyzer.finish()
}

pub fn write_moc_reports(report: &MocReport, dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let paths = [
        dir.join(outputs::PARITY_SERIES),
        dir.join(outputs::PERCENTILES),
        dir.join(outputs::FLOW_STATS),
    ];
    write_parity_series(report, &paths[0])?;
    write_percentiles(report, &paths[1])?;
    write_flow_stats(report, &paths[2])?;
    Ok(paths.to_vec())
}

/// Weekday Case 1 parity deviation per bin over every bus boarding.
pub fn parity_metric<'a>(
    stages: impl IntoIterator<Item = &'a Stage>,
    index: &StopClassIndex,
    labels: &HashMap<String, GenderLabel>,
    stops: &[Stop],
) -> Vec<Option<f64>> {
    let config = MocConfig {
        case: Case::One,
        day_types: vec![DayType::Weekday],
        ..MocConfig::default()
    };
    let report = analyze_moc(stages, index, labels, stops, config);
    let scope = Scope {
        target: Target::AllStops,
        day_type: DayType::Weekday,
        area: Area::All,
    };
    report
        .series_for(scope)
        .map(|cells| cells.iter().map(|c| c.deviation).collect())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccompanimentOutputs {
    pub events: Vec<accompany::AccompanimentEvent>,
    pub patterns: Vec<accompany::AccompanimentPattern>,
    pub hourly: Vec<accompany::HourlyDensity>,
    pub gender_vs_rate: Vec<accompany::RateBucketRow>,
    pub fares: Vec<accompany::FareShare>,
    pub totals: AccompanimentTotals,
}

pub fn analyze_accompaniment<'a>(
    stages: impl IntoIterator<Item = &'a Stage>,
    genders: &[CardGender],
) -> AccompanimentOutputs {
    let mut taps = Vec::new();
    let mut baseline = HourCounts::default();
    for s in stages {
        baseline.add(s.service_date, s.board_time);
        taps.push(Tap::from_stage(s));
    }
    let events = accompany::detect_events(taps);
    let patterns = accompany::aggregate_patterns(&events);
    let cards: HashMap<String, (GenderLabel, bool)> = genders
        .iter()
        .map(|g| (g.card_id.clone(), (g.label, g.registered)))
        .collect();
    AccompanimentOutputs {
        hourly: accompany::hourly_distribution(&events, &baseline),
        gender_vs_rate: accompany::gender_vs_rate(&patterns, &cards),
        fares: accompany::fare_breakdown(&patterns, LOW_RATE_MAX, HIGH_RATE_MIN),
        totals: accompany::totals(&events, &patterns),
        events,
        patterns,
    }
}

pub fn write_accompaniment(out: &AccompanimentOutputs, dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let paths: Vec<PathBuf> = [
        outputs::EVENTS,
        outputs::PATTERNS,
        outputs::HOURLY,
        outputs::GENDER_VS_RATE,
        outputs::FARE_BREAKDOWN,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect();
    accompany::write_events(&out.events, &paths[0])?;
    accompany::write_patterns(&out.patterns, &paths[1])?;
    accompany::write_hourly(&out.hourly, &paths[2])?;
    accompany::write_gender_vs_rate(&out.gender_vs_rate, &paths[3])?;
    accompany::write_fare_breakdown(&out.fares, &paths[4])?;
    Ok(paths)
}

/// Journeys of sampled cards with a bus stage, cross-tabulated by gender and by whether a
/// Case 1 tag falls on them.
pub fn gender_moc_table(
    journeys: &[Journey],
    labels: &HashMap<String, GenderLabel>,
    moc: &HashSet<String>,
) -> Result<ContingencyTable, StatsError> {
    let mut counts = [[0.0; 2]; 2];
    for j in journeys {
        let Some(label) = labels.get(&j.card_id) else {
            continue;
        };
        if !j.stages.iter().any(|s| s.mode == Mode::Bus) {
            continue;
        }
        let row = usize::from(*label != GenderLabel::Woman);
        let col = usize::from(!moc.contains(&j.journey_id));
        counts[row][col] += 1.0;
    }
    ContingencyTable::new(
        vec!["woman".into(), "man".into()],
        vec!["moc".into(), "non_moc".into()],
        counts.iter().map(|r| r.to_vec()).collect(),
    )
}

/// Seeded draw of `n` items without replacement, kept in input order. Returns everything
/// when `n` is not smaller than the input.
pub fn subsample<T>(items: Vec<T>, n: usize, seed: u64) -> Vec<T> {
    if n >= items.len() {
        return items;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = sample(&mut rng, items.len(), n).into_vec();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    items
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.next_if_eq(i).is_some())
        .map(|(_, t)| t)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunnelRow {
    pub stage: &'static str,
    pub cards: u64,
    pub journeys: u64,
    pub stages: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub sample: u64,
    pub stability: Vec<u64>,
    pub stats: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetgeoSummary {
    pub patterns: usize,
    pub entries: usize,
    pub stops_per_class: BTreeMap<PoiClass, usize>,
    pub mean_distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MocSummary {
    pub case: Case,
    pub bus_stages: u64,
    pub without_alighting: u64,
    pub alighting_coverage: f64,
    pub out_of_window: u64,
    pub tagged: BTreeMap<PoiClass, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StatsSummary {
    pub chi_square: Option<ChiSquareResult>,
    pub welch: Vec<(String, WelchResult)>,
    pub mixed: Option<MixedModelFit>,
    pub convenience_pairs: usize,
    pub convenience_journeys: usize,
    /// Tests that could not run, with the reason.
    pub skipped: Vec<String>,
}

/// Everything about a run except wall-clock timings, which live in a separate file so
/// that reruns produce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub seeds: Seeds,
    pub funnel: Vec<FunnelRow>,
    pub cohort: CohortFunnel,
    pub gender: InferenceSummary,
    pub name_cache: CacheNote,
    pub netgeo: NetgeoSummary,
    pub moc: Vec<MocSummary>,
    pub stability_max_spread: Option<f64>,
    pub accompaniment: Option<AccompanimentTotals>,
    pub stats: Option<StatsSummary>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTimings {
    /// Seconds per stage, in execution order.
    pub stages: Vec<(&'static str, f64)>,
    pub total: f64,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub timings: RunTimings,
}

fn funnel_row<'a>(
    stage: &'static str,
    cards: impl IntoIterator<Item = &'a str>,
    per_card: &HashMap<&str, (u64, u64)>,
) -> FunnelRow {
    let mut row = FunnelRow {
        stage,
        cards: 0,
        journeys: 0,
        stages: 0,
    };
    for c in cards {
        let (j, s) = per_card.get(c).copied().unwrap_or_default();
        row.cards += 1;
        row.journeys += j;
        row.stages += s;
    }
    row
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IngestError::Io {
        file: path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| IngestError::Io {
        file: path.display().to_string(),
        source: e,
    })
}

fn run_stats(
    cfg: &PipelineConfig,
    journeys: &[Journey],
    index: &StopClassIndex,
    labels: &HashMap<String, GenderLabel>,
    dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<StatsSummary, IngestError> {
    let mut summary = StatsSummary::default();
    let moc: HashSet<String> = tag_case1(journeys, index).into_iter().map(|t| t.journey_id).collect();

    match gender_moc_table(journeys, labels, &moc).and_then(|t| chi_square(&t).map(|r| (t, r))) {
        Ok((table, result)) => {
            let path = dir.join(outputs::CHI_SQUARE);
            write_chi_square(&table, &result, &path)?;
            written.push(path);
            summary.chi_square = Some(result);
        }
        Err(e) => summary.skipped.push(format!("chi_square: {e}")),
    }

    let opts = ConvenienceOptions {
        max_speed_mph: cfg.max_speed_mph,
        max_in_vehicle_min: cfg.max_in_vehicle_min,
    };
    let mut samples = moc_convenience(journeys, &moc, &opts);
    if let Some(n) = cfg.sample_n {
        samples.journeys = subsample(std::mem::take(&mut samples.journeys), n, cfg.stats_seed);
    }
    summary.convenience_pairs = samples.pairs;
    summary.convenience_journeys = samples.journeys.len();
    for (metric, a, b) in [
        ("in_vehicle_min", samples.in_vehicle(true), samples.in_vehicle(false)),
        ("transfers", samples.transfers(true), samples.transfers(false)),
    ] {
        match welch_t(&a, &b) {
            Ok(r) => summary.welch.push((metric.to_string(), r)),
            Err(e) => summary.skipped.push(format!("welch {metric}: {e}")),
        }
    }
    if !summary.welch.is_empty() {
        let path = dir.join(outputs::WELCH);
        write_welch(&summary.welch, &path)?;
        written.push(path);
    }
    match fit_random_intercept(&samples.mixed_observations()) {
        Ok(fit) => {
            let path = dir.join(outputs::MIXED);
            write_mixed_fit(&fit, &path)?;
            written.push(path);
            summary.mixed = Some(fit);
        }
        Err(e) => summary.skipped.push(format!("mixed model: {e}")),
    }
    Ok(summary)
}

/// Runs every enabled stage. A nonzero `threads` confines parallel work to a dedicated
/// pool of that size.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome, PipelineError> {
    if cfg.threads == 0 {
        return run_stages(cfg);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(at("setup"))?
        .install(|| run_stages(cfg))
}

fn run_stages(cfg: &PipelineConfig) -> Result<RunOutcome, PipelineError> {
    let started = Instant::now();
    let mut timings: Vec<(&'static str, f64)> = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, clock: &mut Instant| {
        timings.push((name, clock.elapsed().as_secs_f64()));
        *clock = Instant::now();
    };
    let dir = cfg.out_dir.as_path();
    std::fs::create_dir_all(dir)
        .map_err(|e| IngestError::Io {
            file: dir.display().to_string(),
            source: e,
        })
        .map_err(at("report"))?;
    let mut written: Vec<PathBuf> = Vec::new();

    let inputs = load_inputs(cfg).map_err(at("ingest"))?;
    let mut per_card: HashMap<&str, (u64, u64)> = HashMap::new();
    for j in &inputs.journeys {
        let e = per_card.entry(j.card_id.as_str()).or_default();
        e.0 += 1;
        e.1 += j.stages.len() as u64;
    }
    lap("ingest", &mut clock);

    let provider = cfg.provider_url.as_deref().map(|u| (u, cfg.api_key.as_deref()));
    let (genders, gender_summary, cache_note) = infer_genders(
        &inputs.registrations,
        &cfg.name_cache,
        cfg.baby_names.as_deref(),
        provider,
        cfg.cutoff,
    )
    .map_err(at("gender"))?;
    let path = dir.join(outputs::CARD_GENDERS);
    write_card_genders(&genders, &path).map_err(at("gender"))?;
    written.push(path);
    lap("gender", &mut clock);

    let sets = poi_stop_sets(&inputs.gtfs, &inputs.pois, cfg.radius_m).map_err(at("netgeo"))?;
    let path = dir.join(outputs::POI_STOPS);
    sets.write_csv(&path).map_err(at("netgeo"))?;
    written.push(path);
    let path = dir.join(outputs::BUFFER_SENSITIVITY);
    write_buffer_sensitivity(&buffer_sensitivity(&sets, &SENSITIVITY_THRESHOLDS_M), &path).map_err(at("netgeo"))?;
    written.push(path);
    let netgeo = NetgeoSummary {
        patterns: build_patterns(&inputs.gtfs).len(),
        entries: sets.entries.len(),
        stops_per_class: PoiClass::ALL.iter().map(|&c| (c, sets.stop_ids(c).len())).collect(),
        mean_distance_m: mean_nearest_distance(&sets).overall,
    };
    let index = StopClassIndex::new(&sets);
    lap("netgeo", &mut clock);

    let profiles = cohort::build_profiles(inputs.stages(), &genders);
    let (sample_set, cohort_funnel) =
        cohort::select_cohort(&profiles, cfg.min_days, cfg.sample_seed).map_err(at("cohort"))?;
    let path = dir.join(outputs::SAMPLE);
    cohort::write_sample(&sample_set, &path).map_err(at("cohort"))?;
    written.push(path);
    let labels = sample_set.label_map();
    let eligible = cohort::eligible(&profiles, cfg.min_days).map_err(at("cohort"))?;
    let active_ids: Vec<&str> = profiles
        .iter()
        .filter(|p| p.active_days >= cfg.min_days)
        .map(|p| p.card_id.as_str())
        .collect();
    let funnel = vec![
        funnel_row("ingested", per_card.keys().copied(), &per_card),
        funnel_row("active", active_ids.iter().copied(), &per_card),
        funnel_row("bus", eligible.iter().map(|p| p.card_id.as_str()), &per_card),
        funnel_row(
            "gendered",
            eligible.iter().filter(|p| p.gender.is_binary()).map(|p| p.card_id.as_str()),
            &per_card,
        ),
        funnel_row("sampled", labels.keys().map(String::as_str), &per_card),
    ];
    lap("cohort", &mut clock);

    let mut moc = Vec::new();
    let mut stability: Option<StabilityReport> = None;
    if cfg.analyze_moc {
        for case in [Case::One, Case::Two] {
            let config = MocConfig {
                case,
                center: cfg.center_bbox,
                excluded_dates: cfg.excluded_dates.clone(),
                ..MocConfig::default()
            };
            let report = analyze_moc(inputs.stages(), &index, &labels, &inputs.gtfs.stops, config);
            written.extend(write_moc_reports(&report, &dir.join(outputs::case_dir(case))).map_err(at("mocgeo"))?);
            moc.push(MocSummary {
                case,
                bus_stages: report.bus_stages,
                without_alighting: report.without_alighting,
                alighting_coverage: report.alighting_coverage,
                out_of_window: report.out_of_window,
                tagged: report.tagged.clone(),
            });
        }
        if cfg.stability {
            let seeds = cohort::default_seeds(cfg.sample_seed, cfg.resamples);
            let report = cohort::resample_stability(&eligible, &seeds, |s| {
                parity_metric(inputs.stages(), &index, &s.label_map(), &inputs.gtfs.stops)
            })
            .map_err(at("mocgeo"))?;
            let path = dir.join(outputs::STABILITY);
            write_stability(&report, &path).map_err(at("mocgeo"))?;
            written.push(path);
            stability = Some(report);
        }
        lap("mocgeo", &mut clock);
    }

    let mut accompaniment = None;
    if cfg.analyze_accompaniment {
        let out = analyze_accompaniment(inputs.stages(), &genders);
        written.extend(write_accompaniment(&out, dir).map_err(at("accompany"))?);
        accompaniment = Some(out.totals);
        lap("accompany", &mut clock);
    }

    let mut stats = None;
    if cfg.run_stats {
        stats = Some(run_stats(cfg, &inputs.journeys, &index, &labels, dir, &mut written).map_err(at("stats"))?);
        lap("stats", &mut clock);
    }

    let mut outputs_list: Vec<String> = written
        .iter()
        .filter_map(|p| p.strip_prefix(dir).ok())
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    outputs_list.push(outputs::RUN_REPORT.to_string());
    let report = RunReport {
        config_hash: cfg.hash(),
        config: cfg
            .canonical()
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        seeds: Seeds {
            sample: cfg.sample_seed,
            stability: stability.as_ref().map(|s| s.seeds.clone()).unwrap_or_default(),
            stats: cfg.stats_seed,
        },
        funnel,
        cohort: cohort_funnel,
        gender: gender_summary,
        name_cache: cache_note,
        netgeo,
        moc,
        stability_max_spread: stability.map(|s| s.max_spread),
        accompaniment,
        stats,
        outputs: outputs_list,
    };
    write_json(&report, &dir.join(outputs::RUN_REPORT)).map_err(at("report"))?;
    lap("report", &mut clock);
    let timings = RunTimings {
        stages: timings,
        total: started.elapsed().as_secs_f64(),
    };
    write_json(&timings, &dir.join(outputs::RUN_TIMINGS)).map_err(at("report"))?;
    Ok(RunOutcome { report, timings })
}

/// Parses a `latS,lonW,latN,lonE` box.
pub fn parse_bbox(s: &str) -> Result<CenterBox, String> {
    s.parse()
}
