//! Acceptance checks, one line per criterion. Runs without the libtest harness so the
//! verdict lines always reach the output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Read};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use careflow_core::accompany::{aggregate_patterns, detect_events, Tap};
use careflow_core::cohort::{self, CardProfile};
use careflow_core::config::KvConfig;
use careflow_core::gender::{
    infer_cards, infer_gender, normalize_name, validate_inference, GenderLabel, NameCache,
};
use careflow_core::ingest::{
    DayType, ErrorPolicy, FareProduct, LatLon, Mode, Poi, PoiClass, Stop, StageReader,
};
use careflow_core::mocgeo::{Area, Case, MocConfig, Scope, StopClassIndex, Target};
use careflow_core::netgeo::{
    buffer_sensitivity, distance, nearest_stops, PoiStopSets, RouteDirectionPattern,
};
use careflow_core::pipeline::{
    analyze_moc, parity_metric, poi_stop_sets, run_pipeline, PipelineConfig, DEFAULT_CUTOFF,
};
use careflow_core::stats::{
    chi_square, fit_random_intercept, welch_t, ContingencyTable,
};
use careflow_core::synth::{
    generate, null_city, plant_mixed_observations, simulate_mixed_observations, write_bulk_stages,
    write_city, SynthCity, SynthConfig,
};

const CITY_SEED: u64 = 1;
const EARTH_RADIUS_M: f64 = 6_371_008.8;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn city() -> &'static SynthCity {
    static CITY: OnceLock<SynthCity> = OnceLock::new();
    CITY.get_or_init(|| generate(&SynthConfig::new(CITY_SEED)).expect("default city"))
}

fn null() -> &'static SynthCity {
    static NULL: OnceLock<SynthCity> = OnceLock::new();
    NULL.get_or_init(|| null_city(&SynthConfig::new(CITY_SEED)).expect("null city"))
}

/// Inferred labels, eligible profiles and the default balanced sample of a city.
struct Cohort {
    eligible: Vec<CardProfile>,
    labels: HashMap<String, GenderLabel>,
}

fn cohort_of(city: &SynthCity) -> Cohort {
    let names: BTreeSet<String> = city
        .registrations
        .iter()
        .filter_map(|r| r.first_name_raw.as_deref().and_then(normalize_name))
        .collect();
    let cache = city.name_cache.with_fallback(names.iter().map(String::as_str), &city.baby_names);
    let (genders, _) = infer_cards(&city.registrations, &cache, DEFAULT_CUTOFF).unwrap();
    let profiles = cohort::build_profiles(city.stages.iter(), &genders);
    let (sample, _) = cohort::select_cohort(&profiles, cohort::DEFAULT_MIN_DAYS, 1).unwrap();
    Cohort {
        eligible: cohort::eligible(&profiles, cohort::DEFAULT_MIN_DAYS).unwrap(),
        labels: sample.label_map(),
    }
}

fn haversine(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

fn equirectangular(a: LatLon, b: LatLon) -> f64 {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let x = (b.lon - a.lon) * ((a.lat + b.lat) / 2.0).to_radians().cos() * k;
    let y = (b.lat - a.lat) * k;
    (x * x + y * y).sqrt()
}

struct Instance {
    stops: Vec<Stop>,
    patterns: Vec<RouteDirectionPattern>,
    pois: Vec<Poi>,
}

/// Random network within a few kilometres, with some co-located stops so that ties occur.
fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let (lat0, lon0) = (rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0));
    let span = 0.02;
    let n_stops = rng.random_range(1..=50);
    let mut stops: Vec<Stop> = Vec::with_capacity(n_stops);
    for i in 0..n_stops {
        let (lat, lon) = if i > 0 && rng.random_bool(0.1) {
            let twin = &stops[rng.random_range(0..i)];
            (twin.lat, twin.lon)
        } else {
            (lat0 + rng.random_range(0.0..span), lon0 + rng.random_range(0.0..span))
        };
        stops.push(Stop {
            stop_id: format!("S{:02}", rng.random_range(0..1000)) + &format!("-{i}"),
            name: String::new(),
            lat,
            lon,
        });
    }
    let patterns = (0..rng.random_range(1..=10))
        .map(|p| {
            let len = rng.random_range(1..=n_stops.min(15));
            let mut ids: Vec<String> = stops.iter().map(|s| s.stop_id.clone()).collect();
            ids.shuffle(rng);
            ids.truncate(len);
            RouteDirectionPattern {
                route_id: format!("R{}", p / 2),
                direction_id: (p % 2) as u8,
                stops: ids,
            }
        })
        .collect();
    let pois = (0..rng.random_range(1..=20))
        .map(|i| Poi {
            poi_id: format!("P{i}"),
            class: PoiClass::ALL[rng.random_range(0..PoiClass::ALL.len())],
            lat: lat0 + rng.random_range(0.0..span),
            lon: lon0 + rng.random_range(0.0..span),
        })
        .collect();
    Instance { stops, patterns, pois }
}

type EntryKey = (String, String, u8, String);

/// Exhaustive scan of every POI against every stop of every pattern.
fn brute_force(inst: &Instance, radius: f64) -> BTreeMap<EntryKey, f64> {
    let by_id: HashMap<&str, &Stop> = inst.stops.iter().map(|s| (s.stop_id.as_str(), s)).collect();
    let mut out = BTreeMap::new();
    for poi in &inst.pois {
        for p in &inst.patterns {
            let mut best: Option<(f64, &str)> = None;
            for sid in &p.stops {
                let d = equirectangular(poi.location(), by_id[sid.as_str()].location());
                if d > radius {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bd, bs)) => d < bd || (d == bd && sid.as_str() < bs),
                };
                if better {
                    best = Some((d, sid));
                }
            }
            if let Some((d, sid)) = best {
                out.insert((poi.poi_id.clone(), p.route_id.clone(), p.direction_id, sid.to_string()), d);
            }
        }
    }
    out
}

fn keyed(sets: &PoiStopSets) -> BTreeMap<EntryKey, f64> {
    sets.entries
        .iter()
        .map(|e| ((e.poi_id.clone(), e.route_id.clone(), e.direction_id, e.stop_id.clone()), e.distance_m))
        .collect()
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let started = Instant::now();
    let mut mismatches = 0;
    let mut entries = 0;
    for _ in 0..200 {
        let inst = instance(&mut rng);
        let got = keyed(&nearest_stops(&inst.pois, &inst.patterns, &inst.stops, 400.0).unwrap());
        let want = brute_force(&inst, 400.0);
        entries += want.len();
        let same = got.len() == want.len()
            && got
                .iter()
                .zip(&want)
                .all(|((gk, gd), (wk, wd))| gk == wk && (gd - wd).abs() <= 1e-9);
        if !same {
            mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Verdict::new(
        mismatches == 0 && secs < 5.0,
        format!("200 instances, {entries} entries, {mismatches} mismatches, {secs:.3} s (limit 5 s)"),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let a = LatLon::new(rng.random_range(-70.0..70.0), rng.random_range(-180.0..180.0));
        let bearing: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let d: f64 = rng.random_range(1.0..2000.0);
        let dlat = d * bearing.cos() / 111_195.0;
        let dlon = d * bearing.sin() / (111_195.0 * a.lat.to_radians().cos());
        let b = LatLon::new(a.lat + dlat, a.lon + dlon);
        let h = haversine(a, b);
        worst = worst.max((distance(a, b) - h).abs() / h);
    }
    Verdict::new(
        worst < 1e-3,
        format!("10000 pairs <= 2 km, worst relative error {:.2e} (limit 1e-3)", worst),
    )
}

fn criterion_3() -> Verdict {
    let started = Instant::now();
    let city = city();
    let cohort = cohort_of(city);
    let sets = poi_stop_sets(&city.gtfs, &city.pois, 400.0).unwrap();
    let index = StopClassIndex::new(&sets);
    let weekday = MocConfig {
        case: Case::One,
        day_types: vec![DayType::Weekday],
        ..MocConfig::default()
    };
    let report = analyze_moc(city.stages.iter(), &index, &cohort.labels, &city.gtfs.stops, weekday);
    let m = &city.manifest;
    let target = m.planted_bins.first().map(|b| b.women_share - m.baseline_share).unwrap_or(0.1);
    let bins: Vec<usize> = m
        .planted_bins
        .iter()
        .filter(|b| b.day_type == DayType::Weekday && b.class == PoiClass::Daycare)
        .map(|b| b.bin)
        .collect();
    let series = report
        .series_for(Scope {
            target: Target::Class(PoiClass::Daycare),
            day_type: DayType::Weekday,
            area: Area::All,
        })
        .unwrap();
    let recovered = bins.iter().filter(|&&b| series[b].contains(target)).count();
    let recovery = recovered as f64 / bins.len() as f64;

    let nc = null();
    let null_cohort = cohort_of(nc);
    let null_sets = poi_stop_sets(&nc.gtfs, &nc.pois, 400.0).unwrap();
    let null_index = StopClassIndex::new(&null_sets);
    let both = MocConfig {
        case: Case::One,
        ..MocConfig::default()
    };
    let null_report = analyze_moc(nc.stages.iter(), &null_index, &null_cohort.labels, &nc.gtfs.stops, both);
    let (mut covered, mut scored) = (0, 0);
    for day_type in [DayType::Weekday, DayType::Weekend] {
        let s = null_report
            .series_for(Scope {
                target: Target::NonPoiStops,
                day_type,
                area: Area::All,
            })
            .unwrap();
        for cell in s.iter().filter(|c| c.ci_half_width.is_some()) {
            scored += 1;
            covered += usize::from(cell.contains(0.0));
        }
    }
    let coverage = covered as f64 / scored as f64;
    let secs = started.elapsed().as_secs_f64();
    Verdict::new(
        recovery >= 0.9 && coverage >= 0.95 && secs < 60.0,
        format!(
            "planted {:+.2} recovered in {recovered}/{} AM bins ({:.1}%, need 90%); null non-POI bins containing 0: {covered}/{scored} ({:.1}%, need 95%); {secs:.1} s (limit 60 s)",
            target,
            bins.len(),
            100.0 * recovery,
            100.0 * coverage
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let radii = [400.0, 200.0, 100.0, 50.0];
    let (mut subset_failures, mut recount_failures) = (0, 0);
    for _ in 0..200 {
        let inst = instance(&mut rng);
        let sets: Vec<PoiStopSets> = radii
            .iter()
            .map(|&r| nearest_stops(&inst.pois, &inst.patterns, &inst.stops, r).unwrap())
            .collect();
        let keys: Vec<BTreeSet<EntryKey>> = sets.iter().map(|s| keyed(s).into_keys().collect()).collect();
        if keys.windows(2).any(|w| !w[1].is_subset(&w[0])) {
            subset_failures += 1;
        }
        for row in buffer_sensitivity(&sets[0], &radii[1..]) {
            let dists: Vec<f64> = sets[0].entries.iter().filter(|e| e.class == row.class).map(|e| e.distance_m).collect();
            for &(t, frac) in &row.within {
                let n = dists.iter().filter(|&&d| d <= t).count();
                let want = if dists.is_empty() { 0.0 } else { n as f64 / dists.len() as f64 };
                if frac != want || row.stops != dists.len() {
                    recount_failures += 1;
                }
            }
        }
    }
    Verdict::new(
        subset_failures == 0 && recount_failures == 0,
        format!("200 instances: {subset_failures} nesting violations, {recount_failures} recount mismatches"),
    )
}

fn tap(card: &str, product: FareProduct, date: NaiveDate, time: u32) -> Tap {
    Tap {
        card_id: card.to_string(),
        journey_id: format!("{card}-{date}-{time}"),
        device_id: "DEV".to_string(),
        service_date: date,
        time,
        fare_product: product,
        mode: Mode::Bus,
    }
}

fn pair_taps(dates: &[NaiveDate], gap: u32) -> Vec<Tap> {
    dates
        .iter()
        .flat_map(|&d| {
            [
                tap("SENIOR", FareProduct::Senior, d, 8 * 3600),
                tap("HELPER", FareProduct::Full, d, 8 * 3600 + gap),
            ]
        })
        .collect()
}

fn criterion_5() -> Verdict {
    let city = city();
    let taps: Vec<Tap> = city.stages.iter().map(Tap::from_stage).collect();
    let patterns = aggregate_patterns(&detect_events(taps));
    type Key = (String, String, String);
    let found: BTreeSet<Key> = patterns
        .iter()
        .filter(|p| p.qualifies)
        .map(|p| (p.accompanied_card.clone(), p.accompanying_card.clone(), p.class.as_str().to_string()))
        .collect();
    let planted: BTreeSet<Key> = city
        .manifest
        .expected_patterns
        .iter()
        .filter(|p| p.qualifies)
        .map(|p| (p.accompanied_card.clone(), p.accompanying_card.clone(), p.class.as_str().to_string()))
        .collect();
    let hits = found.intersection(&planted).count();
    let precision = hits as f64 / found.len().max(1) as f64;
    let recall = hits as f64 / planted.len().max(1) as f64;

    let day = |m: u32, d: u32| NaiveDate::from_ymd_opt(2019, m, d).unwrap();
    let events_at = |gap| detect_events(pair_taps(&[day(1, 7)], gap)).len();
    let gap_ok = events_at(30) == 1 && events_at(31) == 0;
    let weekly: Vec<NaiveDate> = (0..4).map(|w| day(1, 7) + Days::new(7 * w)).collect();
    let spread: Vec<NaiveDate> = [1, 2, 3]
        .iter()
        .flat_map(|&m| [day(m, 5), day(m, 12), day(m, 19)])
        .collect();
    let qualifies = |dates: &[NaiveDate]| {
        let p = aggregate_patterns(&detect_events(pair_taps(dates, 10)));
        (p.len() == 1).then(|| (p[0].total, p[0].qualifies))
    };
    let month_ok = qualifies(&weekly) == Some((4, true)) && qualifies(&spread) == Some((9, false));
    Verdict::new(
        precision == 1.0 && recall == 1.0 && gap_ok && month_ok,
        format!(
            "planted qualifying pairs {}, detected {}, precision {:.3}, recall {:.3}; 30 s/31 s boundary {}; 4-in-month/3+3+3 boundary {}",
            planted.len(),
            found.len(),
            precision,
            recall,
            if gap_ok { "ok" } else { "wrong" },
            if month_ok { "ok" } else { "wrong" }
        ),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn criterion_6() -> Verdict {
    let table = ContingencyTable::from_counts(vec![vec![10.0, 20.0], vec![20.0, 10.0]]).unwrap();
    let chi = chi_square(&table).unwrap();
    let hand = 4.0 * (5.0f64 * 5.0 / 15.0);
    let chi_err = (chi.statistic - hand).abs();

    let a = [12.1, 14.3, 9.8, 11.0, 15.2, 13.7, 10.4];
    let b = [8.2, 9.9, 7.5, 11.1, 6.8, 9.0, 10.3, 8.8, 7.9];
    let w = welch_t(&a, &b).unwrap();
    let (va, vb) = (sample_var(&a) / a.len() as f64, sample_var(&b) / b.len() as f64);
    let t = (mean(&a) - mean(&b)) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let p = {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        2.0 * StudentsT::new(0.0, 1.0, df).unwrap().cdf(-t.abs())
    };
    let welch_err = (w.t - t).abs().max((w.df - df).abs());
    let p_err = (w.p_value - p).abs();

    let same = welch_t(&a, &a).unwrap();
    let prop = chi_square(&ContingencyTable::from_counts(vec![vec![10.0, 30.0], vec![20.0, 60.0]]).unwrap()).unwrap();
    let trivial = same.t == 0.0 && same.p_value == 1.0 && prop.statistic == 0.0 && prop.p_value == 1.0;
    Verdict::new(
        chi_err <= 1e-9 && chi.df == 1 && welch_err <= 1e-9 && p_err <= 1e-9 && trivial,
        format!(
            "chi2 {:.12} (df {}) vs 20/3, err {:.1e}; welch t/df err {:.1e}, p err {:.1e}; trivial cases {}",
            chi.statistic,
            chi.df,
            chi_err,
            welch_err,
            p_err,
            if trivial { "exact" } else { "wrong" }
        ),
    )
}

fn criterion_7() -> Verdict {
    let cfg = SynthConfig::new(CITY_SEED);
    let truth = [cfg.mixed_beta0, cfg.mixed_beta1, cfg.mixed_sigma_u2, cfg.mixed_sigma_e2];
    let rel = |fit: &careflow_core::stats::MixedModelFit| {
        [fit.beta0, fit.beta1, fit.sigma_u2, fit.sigma_e2]
            .iter()
            .zip(&truth)
            .map(|(e, t)| ((e - t) / t).abs())
            .fold(0.0, f64::max)
    };
    let min_step = |fit: &careflow_core::stats::MixedModelFit| {
        let step = fit.loglik_trace.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        (step, step >= -1e-9 * fit.log_likelihood.abs())
    };
    let obs = plant_mixed_observations(&cfg, &mut ChaCha8Rng::seed_from_u64(107));
    let fit = fit_random_intercept(&obs).unwrap();
    let worst = rel(&fit);
    let (mut smallest, mut monotone) = min_step(&fit);
    let mut iid = Vec::new();
    let mut iterations = Vec::new();
    let mut capped = 0;
    for r in 0..5 {
        let obs = simulate_mixed_observations(&cfg, &mut ChaCha8Rng::seed_from_u64(1070 + r));
        let f = fit_random_intercept(&obs).unwrap();
        let (step, ok) = min_step(&f);
        smallest = smallest.min(step);
        monotone &= ok;
        iid.push(rel(&f));
        iterations.push(f.iterations);
        // Dropping rows unbalances the design so that EM has to iterate.
        let mut drop_rng = ChaCha8Rng::seed_from_u64(2070 + r);
        let kept: Vec<_> = obs.into_iter().filter(|_| drop_rng.random_bool(0.7)).collect();
        let f = fit_random_intercept(&kept).unwrap();
        let (step, ok) = min_step(&f);
        smallest = smallest.min(step);
        monotone &= ok;
        capped += usize::from(!f.converged);
        iterations.push(f.iterations);
    }
    Verdict::new(
        worst < 0.05 && monotone && fit.converged,
        format!(
            "{} groups x {} obs: estimates ({:.3}, {:.3}, {:.2}, {:.2}), worst relative error {:.2e} (limit 5%); log-likelihood non-decreasing over {} fits with {} EM iterations, smallest step {:.2e}, {} unbalanced fits stopped at the iteration cap; independent-draw replicates worst error {}",
            cfg.mixed_groups,
            cfg.mixed_per_group,
            fit.beta0,
            fit.beta1,
            fit.sigma_u2,
            fit.sigma_e2,
            worst,
            iterations.len() + 1,
            iterations.iter().sum::<usize>() + fit.iterations,
            smallest,
            capped,
            iid.iter().map(|e| format!("{:.1}%", 100.0 * e)).collect::<Vec<_>>().join("/")
        ),
    )
}

fn fuzz_name(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &[
        'a', 'B', 'c', 'D', 'e', 'z', 'Q', 'é', 'Ö', 'ß', 'ǅ', 'İ', 'ı', 'ﬁ', 'Σ', 'ς', 'ŉ', '-', '-', ' ', '\t',
        '\u{a0}', '\'', '.', '0', '7', 'Ж', 'я', '李', 'ǈ',
    ];
    (0..rng.random_range(0..14))
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())])
        .collect()
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut unstable = 0;
    for _ in 0..1000 {
        let raw = fuzz_name(&mut rng);
        if let Some(once) = normalize_name(&raw) {
            if normalize_name(&once).as_deref() != Some(once.as_str()) {
                unstable += 1;
            }
        }
    }

    let city = city();
    let cache: &NameCache = &city.name_cache;
    let cutoffs: Vec<f64> = (0..=50).map(|i| 0.5 + 0.01 * i as f64).collect();
    let mut violations = 0;
    let names: Vec<&str> = cache.records().map(|r| r.name.as_str()).collect();
    for name in &names {
        let labels: Vec<GenderLabel> = cutoffs.iter().map(|&c| infer_gender(name, cache, c).0).collect();
        for w in labels.windows(2) {
            if w[1].is_binary() && w[1] != w[0] {
                violations += 1;
            }
        }
    }

    let names_set: BTreeSet<String> = city
        .registrations
        .iter()
        .filter_map(|r| r.first_name_raw.as_deref().and_then(normalize_name))
        .collect();
    let full = cache.with_fallback(names_set.iter().map(String::as_str), &city.baby_names);
    let (genders, _) = infer_cards(&city.registrations, &full, DEFAULT_CUTOFF).unwrap();
    let mut scored: Vec<(GenderLabel, GenderLabel)> = genders
        .iter()
        .filter(|g| g.label.is_binary())
        .map(|g| (g.label, g.label))
        .collect();
    let n_flip = (scored.len() as f64 * 0.1).round() as usize;
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.shuffle(&mut rng);
    for &i in &order[..n_flip] {
        scored[i].1 = scored[i].0.swapped();
    }
    let report = validate_inference(scored.iter().map(|&(inferred, reported)| (inferred, reported, "all")));
    let err_pp = 100.0 * report.error_rate;
    Verdict::new(
        unstable == 0 && violations == 0 && (err_pp - 10.0).abs() <= 1.0,
        format!(
            "1000 fuzz names, {unstable} not idempotent; {} cached names x {} cutoffs, {violations} monotonicity violations; 10% planted label noise reported as {err_pp:.2}% over {} cards",
            names.len(),
            cutoffs.len(),
            report.scored
        ),
    )
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|f| f != "run_timings.json") {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Replays a header and a block of CSV rows `repeats` times without materializing them.
struct RepeatedRows {
    header: Vec<u8>,
    body: Vec<u8>,
    repeats: u64,
    done: u64,
    pos: usize,
    in_header: bool,
}

impl Read for RepeatedRows {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let src = if self.in_header { &self.header } else { &self.body };
        if !self.in_header && self.done == self.repeats {
            return Ok(0);
        }
        let n = buf.len().min(src.len() - self.pos);
        buf[..n].copy_from_slice(&src[self.pos..self.pos + n]);
        self.pos += n;
        if self.pos == src.len() {
            self.pos = 0;
            if self.in_header {
                self.in_header = false;
            } else {
                self.done += 1;
            }
        }
        Ok(n)
    }
}

fn resident_kib() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn stream_rows(dir: &Path) -> String {
    const BLOCK: u64 = 100_000;
    const REPEATS: u64 = 100;
    let path = dir.join("block.csv");
    write_bulk_stages(&path, BLOCK, 9).unwrap();
    let text = fs::read(&path).unwrap();
    let split = text.iter().position(|&b| b == b'\n').unwrap() + 1;
    let source = RepeatedRows {
        header: text[..split].to_vec(),
        body: text[split..].to_vec(),
        repeats: REPEATS,
        done: 0,
        pos: 0,
        in_header: true,
    };
    let started = Instant::now();
    let mut reader = StageReader::from_reader(source, "repeated", ErrorPolicy::Fatal);
    let (mut rows, mut rss_1m, mut rss_end) = (0u64, None, None);
    for row in reader.by_ref() {
        row.unwrap();
        rows += 1;
        if rows == 1_000_000 {
            rss_1m = resident_kib();
        }
    }
    if rows >= 1_000_000 {
        rss_end = resident_kib();
    }
    let secs = started.elapsed().as_secs_f64();
    let growth = match (rss_1m, rss_end) {
        (Some(a), Some(b)) => format!("{:+} KiB resident between 1M and {}M rows", b as i64 - a as i64, rows / 1_000_000),
        _ => "resident memory unavailable".to_string(),
    };
    format!(
        "streamed {rows} rows in {secs:.1} s ({:.0} rows/s, soft target 500000), {growth}",
        rows as f64 / secs
    )
}

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let city_dir = dir.path().join("city");
    write_city(city(), &city_dir).unwrap();
    let run = |out: &str, threads: &str| -> (Duration, BTreeMap<String, Vec<u8>>) {
        let mut kv = KvConfig::default();
        kv.set("city_dir", city_dir.display().to_string());
        kv.set("out_dir", dir.path().join(out).display().to_string());
        kv.set("threads", threads);
        let cfg = PipelineConfig::from_kv(&kv).unwrap();
        let started = Instant::now();
        run_pipeline(&cfg).unwrap();
        (started.elapsed(), files_under(&cfg.out_dir))
    };
    let (t1, first) = run("run1", "1");
    let (t2, second) = run("run2", "1");
    let (_, parallel) = run("run3", "0");
    let identical = !first.is_empty() && first == second;
    let across_threads = first == parallel;
    let slowest = t1.max(t2).as_secs_f64();
    let stream = stream_rows(dir.path());
    Verdict::new(
        identical && across_threads && slowest < 120.0,
        format!(
            "{} report files byte-identical across reruns: {identical}, and with all cores: {across_threads}; single-threaded run {slowest:.1} s (limit 120 s); {stream}",
            first.len()
        ),
    )
}

fn criterion_10() -> Verdict {
    let nc = null();
    let cohort = cohort_of(nc);
    let sets = poi_stop_sets(&nc.gtfs, &nc.pois, 400.0).unwrap();
    let index = StopClassIndex::new(&sets);
    let seeds = cohort::default_seeds(1, 10);
    let report = cohort::resample_stability(&cohort.eligible, &seeds, |s| {
        parity_metric(nc.stages.iter(), &index, &s.label_map(), &nc.gtfs.stops)
    })
    .unwrap();
    let worst = report
        .bins
        .iter()
        .filter(|b| b.spread == Some(report.max_spread))
        .map(|b| b.bin)
        .next();
    Verdict::new(
        report.max_spread < 0.02,
        format!(
            "k = {} balanced samples, weekday all-stop parity over {} bins: max spread {:.2} pp at bin {:?} (limit 2 pp)",
            seeds.len(),
            report.bins.len(),
            100.0 * report.max_spread,
            worst
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("nearest stops match brute force", criterion_1),
        ("equirectangular vs haversine", criterion_2),
        ("parity recovery and null coverage", criterion_3),
        ("buffer nesting and recount", criterion_4),
        ("accompaniment detection", criterion_5),
        ("statistics oracles", criterion_6),
        ("mixed model recovery", criterion_7),
        ("gender pipeline", criterion_8),
        ("determinism and performance", criterion_9),
        ("sampling stability", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string()) {
            continue;
        }
        let started = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!verdict.pass);
        println!(
            "criterion {n:>2} {}: {} ({:.1} s) {}",
            name,
            if verdict.pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            verdict.detail
        );
    }
    println!("acceptance: {} failed", failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
