use std::path::Path;

use careflow_core::config::KvConfig;
use careflow_core::pipeline::{run_pipeline, PipelineConfig};
use careflow_core::synth::{generate, write_city, SynthConfig};

fn city(dir: &Path, seed: u64) {
    let cfg = SynthConfig {
        n_cards: 1500,
        days: 30,
        accompaniment_pairs: 20,
        mixed_groups: 40,
        ..SynthConfig::new(seed)
    };
    write_city(&generate(&cfg).unwrap(), dir).unwrap();
}

fn config(city: &Path, out: &Path) -> PipelineConfig {
    let mut kv = KvConfig::default();
    kv.set("city_dir", city.display().to_string());
    kv.set("out_dir", out.display().to_string());
    kv.set("resamples", "3");
    PipelineConfig::from_kv(&kv).unwrap()
}

#[test]
fn small_city_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let city_dir = dir.path().join("city");
    city(&city_dir, 5);
    let out = dir.path().join("out");
    let outcome = run_pipeline(&config(&city_dir, &out)).unwrap();
    let report = &outcome.report;
    for f in &report.outputs {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(out.join("run_timings.json").is_file());
    assert!(report.outputs.iter().any(|f| f.ends_with("parity_series.csv")));
    assert!(report
        .funnel
        .windows(2)
        .all(|w| w[1].cards <= w[0].cards && w[1].journeys <= w[0].journeys && w[1].stages <= w[0].stages));
    assert_eq!(report.moc.len(), 2);
    assert!(report.accompaniment.is_some());
    assert_eq!(report.seeds.stability.len(), 3);
}

#[test]
fn missing_gtfs_is_attributed_to_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let city_dir = dir.path().join("city");
    city(&city_dir, 6);
    std::fs::remove_dir_all(city_dir.join("gtfs")).unwrap();
    let err = run_pipeline(&config(&city_dir, &dir.path().join("out"))).err().unwrap();
    assert_eq!(err.stage, "ingest");
    assert!(err.to_string().starts_with("ingest stage failed"));
}

#[test]
fn null_city_chi_square_is_calibrated() {
    use careflow_core::gender::{infer_cards, normalize_name};
    use careflow_core::mocgeo::{tag_case1, StopClassIndex};
    use careflow_core::pipeline::{gender_moc_table, poi_stop_sets, DEFAULT_CUTOFF};
    use careflow_core::stats::chi_square;
    use careflow_core::synth::null_city;
    use std::collections::{BTreeSet, HashSet};

    let replicates = 40;
    let mut above = 0;
    for seed in 0..replicates {
        let cfg = SynthConfig {
            n_cards: 1500,
            days: 30,
            accompaniment_pairs: 10,
            mixed_groups: 10,
            ..SynthConfig::new(300 + seed)
        };
        let city = null_city(&cfg).unwrap();
        let names: BTreeSet<String> = city
            .registrations
            .iter()
            .filter_map(|r| r.first_name_raw.as_deref().and_then(normalize_name))
            .collect();
        let cache = city.name_cache.with_fallback(names.iter().map(String::as_str), &city.baby_names);
        let (genders, _) = infer_cards(&city.registrations, &cache, DEFAULT_CUTOFF).unwrap();
        let profiles = careflow_core::cohort::build_profiles(city.stages.iter(), &genders);
        let (sample, _) = careflow_core::cohort::select_cohort(&profiles, 10, 1).unwrap();
        let journeys = careflow_core::ingest::assemble_journeys(city.stages.clone()).unwrap();
        let index = StopClassIndex::new(&poi_stop_sets(&city.gtfs, &city.pois, 400.0).unwrap());
        let moc: HashSet<String> = tag_case1(&journeys, &index).into_iter().map(|t| t.journey_id).collect();
        let table = gender_moc_table(&journeys, &sample.label_map(), &moc).unwrap();
        if chi_square(&table).unwrap().p_value > 0.05 {
            above += 1;
        }
    }
    assert!(above * 10 >= replicates * 9, "p > 0.05 in {above}/{replicates}");
}
