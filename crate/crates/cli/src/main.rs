use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use careflow_core::cohort;
use careflow_core::config::KvConfig;
use careflow_core::gender::{load_card_genders, write_card_genders};
use careflow_core::ingest::{
    load_gtfs, load_pois, load_registrations, load_stages, DayType, ErrorPolicy,
};
use careflow_core::mocgeo::{CenterBox, MocConfig, StopClassIndex};
use careflow_core::netgeo::{buffer_sensitivity, PoiStopSets, SENSITIVITY_THRESHOLDS_M};
use careflow_core::pipeline::{
    self, analyze_accompaniment, analyze_moc, configure_threads, infer_genders, load_journeys, poi_stop_sets,
    read_contingency, read_two_samples, run_pipeline, write_accompaniment, write_buffer_sensitivity,
    write_chi_square, write_mixed_fit, write_moc_reports, write_welch, PipelineConfig, DEFAULT_CUTOFF,
    DEFAULT_SEED,
};
use careflow_core::stats::{chi_square, fit_random_intercept, load_mixed_observations, welch_t};
use careflow_core::synth::{generate, null_city, write_city, SynthConfig};

#[derive(Parser)]
#[command(name = "careflow", version, about = "Mobility-of-care analytics over transit smart-card data")]
struct Cli {
    /// Worker cap for parallel stages; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city with its ground-truth manifest.
    Synth(SynthArgs),
    /// Validate input files and print row counts.
    IngestCheck(IngestCheckArgs),
    /// Infer a gender label per card from registration first names.
    InferGender(InferGenderArgs),
    /// Match POIs to the nearest stop of every route direction.
    PoiStops(PoiStopsArgs),
    /// Draw the gender-balanced cohort of active bus riders.
    Sample(SampleArgs),
    /// Tag mobility-of-care stages and compute parity series.
    AnalyzeMoc(AnalyzeMocArgs),
    /// Detect accompaniment events and recurring patterns.
    AnalyzeAccompaniment(AnalyzeAccompanimentArgs),
    /// Run a single statistical test on a CSV input.
    Stats(StatsArgs),
    /// Run the whole pipeline from a configuration file.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Flat key = value file; flags and --set override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Remove every planted gender effect.
    #[arg(long)]
    null: bool,
    /// Extra key=value overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct IngestCheckArgs {
    #[arg(long)]
    gtfs: Option<PathBuf>,
    #[arg(long)]
    pois: Option<PathBuf>,
    #[arg(long)]
    stages: Option<PathBuf>,
    #[arg(long)]
    registrations: Option<PathBuf>,
    /// Skip malformed stage rows instead of failing.
    #[arg(long)]
    skip_malformed: bool,
}

#[derive(Args)]
struct InferGenderArgs {
    #[arg(long)]
    registrations: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    baby_names: Option<PathBuf>,
    #[arg(long, requires = "api_key")]
    provider_url: Option<String>,
    #[arg(long)]
    api_key: Option<String>,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    cutoff: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PoiStopsArgs {
    #[arg(long)]
    gtfs: PathBuf,
    #[arg(long)]
    pois: PathBuf,
    #[arg(long, default_value_t = 400.0)]
    radius: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the share of entries within each smaller radius.
    #[arg(long)]
    sensitivity: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    stages: PathBuf,
    #[arg(long)]
    genders: PathBuf,
    #[arg(long, default_value_t = cohort::DEFAULT_MIN_DAYS)]
    min_days: u32,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DayTypeArg {
    Weekday,
    Weekend,
}

impl From<DayTypeArg> for DayType {
    fn from(d: DayTypeArg) -> Self {
        match d {
            DayTypeArg::Weekday => DayType::Weekday,
            DayTypeArg::Weekend => DayType::Weekend,
        }
    }
}

#[derive(Args)]
struct AnalyzeMocArgs {
    #[arg(long)]
    stages: PathBuf,
    #[arg(long)]
    sample: PathBuf,
    #[arg(long)]
    poi_stops: PathBuf,
    /// Stop coordinates; required with --center-bbox.
    #[arg(long)]
    gtfs: Option<PathBuf>,
    #[arg(long, default_value = "1")]
    case: careflow_core::mocgeo::Case,
    /// Repeatable; both day types when omitted.
    #[arg(long, value_enum)]
    day_type: Vec<DayTypeArg>,
    /// latS,lonW,latN,lonE
    #[arg(long, requires = "gtfs")]
    center_bbox: Option<CenterBox>,
    /// Comma-separated service dates to drop.
    #[arg(long, value_delimiter = ',')]
    exclude_dates: Vec<NaiveDate>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeAccompanimentArgs {
    #[arg(long)]
    stages: PathBuf,
    #[arg(long)]
    genders: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Test {
    /// Contingency table: label column then one column per category.
    Chi2,
    /// Two groups as group,value rows.
    Welch,
    /// od_pair_id,moc_flag,in_vehicle_minutes rows.
    Mixed,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(value_enum)]
    test: Test,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mixed model only: fit a seeded random subset of this many rows.
    #[arg(long)]
    sample_n: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, env = "CAREFLOW_CONFIG")]
    config: Option<PathBuf>,
    /// Directory written by `careflow synth`; fills every input path.
    #[arg(long)]
    city_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    sample_n: Option<usize>,
    /// Extra key=value overrides of configuration keys.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = execute(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn execute(cli: Cli) -> Result<()> {
    configure_threads(cli.threads);
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::IngestCheck(a) => ingest_check(a),
        Command::InferGender(a) => infer_gender(a),
        Command::PoiStops(a) => poi_stops(a),
        Command::Sample(a) => sample(a),
        Command::AnalyzeMoc(a) => analyze_moc_cmd(a),
        Command::AnalyzeAccompaniment(a) => analyze_accompaniment_cmd(a),
        Command::Stats(a) => stats(a),
        Command::Run(a) => run(a, cli.threads),
    }
}

/// Layers `--set` pairs and explicit flags over an optional config file.
fn layered(file: Option<&Path>, sets: &[String], flags: &[(&str, Option<String>)]) -> Result<KvConfig> {
    let mut kv = match file {
        Some(p) => KvConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => KvConfig::default(),
    };
    let mut over = KvConfig::default();
    for s in sets {
        let Some((k, v)) = s.split_once('=') else {
            bail!("--set expects KEY=VALUE, got '{s}'");
        };
        over.set(k.trim(), v.trim());
    }
    for (k, v) in flags {
        if let Some(v) = v {
            over.set(*k, v.clone());
        }
    }
    kv.overlay(&over);
    Ok(kv)
}

fn path_flag(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn synth(a: SynthArgs) -> Result<()> {
    let kv = layered(
        a.config.as_deref(),
        &a.sets,
        &[
            ("seed", a.seed.map(|s| s.to_string())),
            ("null_city", a.null.then(|| "true".to_string())),
            ("out_dir", path_flag(&a.out_dir)),
        ],
    )?;
    let config = SynthConfig::from_kv(&kv)?;
    let null = kv.get_or("null_city", false)?;
    let out = PathBuf::from(kv.raw("out_dir").unwrap_or("city"));
    let city = if null { null_city(&config)? } else { generate(&config)? };
    write_city(&city, &out)?;
    let c = &city.manifest.counts;
    println!(
        "wrote {}: {} cards, {} journeys, {} stages",
        out.display(),
        c.cards,
        c.journeys,
        c.stages
    );
    Ok(())
}

fn ingest_check(a: IngestCheckArgs) -> Result<()> {
    if a.gtfs.is_none() && a.pois.is_none() && a.stages.is_none() && a.registrations.is_none() {
        bail!("name at least one input to check");
    }
    if let Some(dir) = &a.gtfs {
        let g = load_gtfs(dir)?;
        println!(
            "gtfs: {} stops, {} routes, {} trips, {} stop_times",
            g.stops.len(),
            g.routes.len(),
            g.trips.len(),
            g.stop_times.len()
        );
    }
    if let Some(p) = &a.pois {
        println!("pois: {}", load_pois(p)?.len());
    }
    if let Some(p) = &a.registrations {
        println!("registrations: {}", load_registrations(p)?.len());
    }
    if let Some(p) = &a.stages {
        let policy = if a.skip_malformed { ErrorPolicy::Skip } else { ErrorPolicy::Fatal };
        let mut reader = load_stages(p, policy)?;
        let mut ok = 0u64;
        for row in reader.by_ref() {
            row?;
            ok += 1;
        }
        println!("stages: {ok} valid, {} skipped", reader.skipped());
    }
    Ok(())
}

fn infer_gender(a: InferGenderArgs) -> Result<()> {
    let regs = load_registrations(&a.registrations)?;
    let provider = a.provider_url.as_deref().map(|u| (u, a.api_key.as_deref()));
    let (genders, summary, _) = infer_genders(&regs, &a.cache, a.baby_names.as_deref(), provider, a.cutoff)?;
    write_card_genders(&genders, &a.out)?;
    println!(
        "{} cards: {} women, {} men, {} unknown",
        summary.cards, summary.women, summary.men, summary.unknown
    );
    Ok(())
}

fn poi_stops(a: PoiStopsArgs) -> Result<()> {
    let gtfs = load_gtfs(&a.gtfs)?;
    let pois = load_pois(&a.pois)?;
    let sets = poi_stop_sets(&gtfs, &pois, a.radius)?;
    sets.write_csv(&a.out)?;
    if let Some(p) = &a.sensitivity {
        write_buffer_sensitivity(&buffer_sensitivity(&sets, &SENSITIVITY_THRESHOLDS_M), p)?;
    }
    println!("{} poi-stop entries", sets.entries.len());
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let journeys = load_journeys(&a.stages)?;
    let genders = load_card_genders(&a.genders)?;
    let profiles = cohort::build_profiles(journeys.iter().flat_map(|j| j.stages.iter()), &genders);
    let (sample, funnel) = cohort::select_cohort(&profiles, a.min_days, a.seed)?;
    cohort::write_sample(&sample, &a.out)?;
    println!(
        "{} cards, {} active, {} on bus, {} gendered, {} sampled",
        funnel.cards, funnel.active, funnel.on_bus, funnel.gendered, funnel.sampled
    );
    Ok(())
}

fn analyze_moc_cmd(a: AnalyzeMocArgs) -> Result<()> {
    let journeys = load_journeys(&a.stages)?;
    let labels: HashMap<_, _> = cohort::load_sample(&a.sample)?.into_iter().collect();
    let sets = PoiStopSets::read_csv(&a.poi_stops)?;
    let stops = match &a.gtfs {
        Some(dir) => load_gtfs(dir)?.stops,
        None => Vec::new(),
    };
    let mut config = MocConfig {
        case: a.case,
        center: a.center_bbox,
        excluded_dates: a.exclude_dates.into_iter().collect::<BTreeSet<_>>(),
        ..MocConfig::default()
    };
    if !a.day_type.is_empty() {
        config.day_types = a.day_type.into_iter().map(DayType::from).collect();
        config.day_types.dedup();
    }
    let index = StopClassIndex::new(&sets);
    let report = analyze_moc(journeys.iter().flat_map(|j| j.stages.iter()), &index, &labels, &stops, config);
    write_moc_reports(&report, &a.out_dir)?;
    println!(
        "{} bus stages, alighting coverage {:.3}, reports in {}",
        report.bus_stages,
        report.alighting_coverage,
        a.out_dir.display()
    );
    Ok(())
}

fn analyze_accompaniment_cmd(a: AnalyzeAccompanimentArgs) -> Result<()> {
    let journeys = load_journeys(&a.stages)?;
    let genders = load_card_genders(&a.genders)?;
    let out = analyze_accompaniment(journeys.iter().flat_map(|j| j.stages.iter()), &genders);
    write_accompaniment(&out, &a.out_dir)?;
    println!("{} events, {} patterns", out.events.len(), out.patterns.len());
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    match a.test {
        Test::Chi2 => {
            let table = read_contingency(&a.input)?;
            let r = chi_square(&table)?;
            write_chi_square(&table, &r, &a.out)?;
            println!("chi2 = {} (df {}), p = {}", r.statistic, r.df, r.p_value);
        }
        Test::Welch => {
            let [x, y] = read_two_samples(&a.input)?;
            let r = welch_t(&x.1, &y.1)?;
            write_welch(&[(format!("{}-{}", x.0, y.0), r.clone())], &a.out)?;
            println!("t = {} (df {}), p = {}", r.t, r.df, r.p_value);
        }
        Test::Mixed => {
            let mut obs = load_mixed_observations(&a.input)?;
            if let Some(n) = a.sample_n {
                obs = pipeline::subsample(obs, n, a.seed);
            }
            let fit = fit_random_intercept(&obs)?;
            write_mixed_fit(&fit, &a.out)?;
            println!(
                "beta0 = {}, beta1 = {}, sigma_u2 = {}, sigma_e2 = {}, converged = {}",
                fit.beta0, fit.beta1, fit.sigma_u2, fit.sigma_e2, fit.converged
            );
        }
    }
    Ok(())
}

fn run(a: RunArgs, threads: usize) -> Result<()> {
    let kv = layered(
        a.config.as_deref(),
        &a.sets,
        &[
            ("city_dir", path_flag(&a.city_dir)),
            ("out_dir", path_flag(&a.out_dir)),
            ("sample_n", a.sample_n.map(|n| n.to_string())),
            ("threads", (threads > 0).then(|| threads.to_string())),
        ],
    )?;
    let config = PipelineConfig::from_kv(&kv)?;
    let outcome = run_pipeline(&config)?;
    for row in &outcome.report.funnel {
        println!("{:<10} {:>9} cards {:>10} journeys {:>10} stages", row.stage, row.cards, row.journeys, row.stages);
    }
    println!(
        "{} outputs in {} ({:.1} s)",
        outcome.report.outputs.len(),
        config.out_dir.display(),
        outcome.timings.total
    );
    Ok(())
}
