use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use careflow_core::gender::{infer_cards, BabyNames, GenderLabel, NameCache};
use careflow_core::ingest::{
    load_gtfs, load_pois, load_registrations, load_stages, DayType, ErrorPolicy, Mode, PoiClass, Stage,
};
use careflow_core::netgeo::{build_patterns, nearest_stops};
use careflow_core::pipeline::DEFAULT_CUTOFF;
use careflow_core::synth::{files, generate, null_city, write_city, CardCategory, SynthConfig, TruthManifest};

fn config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_cards: 1200,
        days: 21,
        accompaniment_pairs: 20,
        mixed_groups: 20,
        ..SynthConfig::new(seed)
    }
}

fn read_all(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn written_city_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    write_city(&generate(&config(3)).unwrap(), &a).unwrap();
    write_city(&generate(&config(3)).unwrap(), &b).unwrap();
    write_city(&generate(&config(4)).unwrap(), &c).unwrap();
    let (fa, fb, fc) = (read_all(&a), read_all(&b), read_all(&c));
    assert_eq!(fa.len(), 11);
    assert_eq!(fa, fb);
    assert_ne!(fa[files::STAGES], fc[files::STAGES]);
}

#[test]
fn manifest_matches_recount_of_emitted_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = config(8);
    write_city(&generate(&cfg).unwrap(), dir).unwrap();
    let m = TruthManifest::load(dir.join(files::MANIFEST)).unwrap();

    let gtfs = load_gtfs(dir.join(files::GTFS_DIR)).unwrap();
    let pois = load_pois(dir.join(files::POIS)).unwrap();
    let regs = load_registrations(dir.join(files::REGISTRATIONS)).unwrap();
    let stages: Vec<Stage> = load_stages(dir.join(files::STAGES), ErrorPolicy::Fatal)
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();

    assert_eq!(regs.len(), m.counts.cards);
    assert_eq!(m.cards.len(), m.counts.cards);
    assert_eq!(stages.len(), m.counts.stages);
    let journeys: BTreeSet<&str> = stages.iter().map(|s| s.journey_id.as_str()).collect();
    assert_eq!(journeys.len(), m.counts.journeys);
    let bus: Vec<&Stage> = stages.iter().filter(|s| s.mode == Mode::Bus).collect();
    assert_eq!(bus.len(), m.counts.bus_stages);
    assert_eq!(bus.iter().filter(|s| s.alight_stop.is_some()).count(), m.counts.bus_stages_with_alighting);
    assert_eq!(stages.len() - bus.len(), m.counts.rail_stages);

    // Per-class stop sets recomputed from the emitted network.
    let sets = nearest_stops(&pois, &build_patterns(&gtfs), &gtfs.stops, 400.0).unwrap();
    for class in PoiClass::ALL {
        let got: Vec<String> = sets.stop_ids(class).into_iter().collect();
        assert_eq!(got, m.poi_stops[&class], "{class}");
    }

    // Planted boardings recounted from the stage file.
    let planted_class = m.planted_bins[0].class;
    let planted_stops: BTreeSet<&str> = m.poi_stops[&planted_class].iter().map(String::as_str).collect();
    let regular: HashMap<&str, GenderLabel> = m
        .cards_of(CardCategory::Regular)
        .map(|c| (c.card_id.as_str(), c.gender))
        .collect();
    let window = cfg.planted_start..cfg.planted_end;
    let (mut women, mut men) = (0, 0);
    for s in &bus {
        if s.stage_index >= 2
            && s.day_type() == DayType::Weekday
            && window.contains(&s.board_time)
            && planted_stops.contains(s.board_stop.as_str())
        {
            match regular.get(s.card_id.as_str()) {
                Some(GenderLabel::Woman) => women += 1,
                Some(_) => men += 1,
                None => {}
            }
        }
    }
    assert_eq!((women, men), (m.counts.planted_women, m.counts.planted_men));
    assert!(women > men);

    // Inference from the emitted name files reproduces every expected label.
    let cache = NameCache::load(dir.join(files::NAME_CACHE)).unwrap();
    let baby = BabyNames::load(dir.join(files::BABY_NAMES)).unwrap();
    let names: Vec<&str> = m.cards.iter().filter_map(|c| c.name.as_deref()).collect();
    let cache = cache.with_fallback(names, &baby);
    let (genders, _) = infer_cards(&regs, &cache, DEFAULT_CUTOFF).unwrap();
    for g in &genders {
        assert_eq!(g.label, m.card(&g.card_id).unwrap().expected_label, "{}", g.card_id);
    }
}

#[test]
fn null_city_plants_nothing() {
    let m = null_city(&config(5)).unwrap().manifest;
    assert!(m.planted_bins.iter().all(|b| b.women_share == 0.5));
    assert_eq!(m.baseline_share, 0.5);
}
