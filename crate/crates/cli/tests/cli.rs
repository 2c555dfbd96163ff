use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn careflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_careflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("CAREFLOW_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_city(dir: &Path) {
    ok(careflow(
        &[
            "synth", "--seed", "4", "--set", "n_cards=900", "--set", "days=28", "--set", "accompaniment_pairs=20",
            "--set", "mixed_groups=30", "--out-dir", "city",
        ],
        dir,
    ));
}

fn same(a: &Path, b: &Path) {
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{} differs from {}", a.display(), b.display());
}

#[test]
fn subcommands_reproduce_the_orchestrated_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_city(d);
    fs::write(d.join("run.cfg"), "city_dir = city\nout_dir = ignored\nmin_days = 12\nresamples = 3\n").unwrap();
    let stdout = ok(Command::new(env!("CARGO_BIN_EXE_careflow"))
        .args(["run", "--out-dir", "out", "--set", "min_days=10"])
        .current_dir(d)
        .env("CAREFLOW_CONFIG", "run.cfg")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap());
    assert!(stdout.contains("sampled"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("out/run_report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["min_days"], "10");
    assert_eq!(report["config"]["resamples"], "3");
    assert!(!d.join("ignored").exists());
    for f in report["outputs"].as_array().unwrap() {
        assert!(d.join("out").join(f.as_str().unwrap()).is_file());
    }

    ok(careflow(
        &[
            "infer-gender", "--registrations", "city/registrations.csv", "--cache", "city/name_cache.csv",
            "--baby-names", "city/baby_names.csv", "--out", "genders.csv",
        ],
        d,
    ));
    same(&d.join("genders.csv"), &d.join("out/card_genders.csv"));

    ok(careflow(
        &["poi-stops", "--gtfs", "city/gtfs", "--pois", "city/pois.csv", "--out", "poi_stops.csv", "--sensitivity", "buffer.csv"],
        d,
    ));
    same(&d.join("poi_stops.csv"), &d.join("out/poi_stops.csv"));
    same(&d.join("buffer.csv"), &d.join("out/buffer_sensitivity.csv"));

    ok(careflow(
        &["sample", "--stages", "city/stages.csv", "--genders", "genders.csv", "--min-days", "10", "--seed", "1", "--out", "sample.csv"],
        d,
    ));
    same(&d.join("sample.csv"), &d.join("out/sample.csv"));

    for case in ["1", "2"] {
        ok(careflow(
            &[
                "analyze-moc", "--stages", "city/stages.csv", "--sample", "sample.csv", "--poi-stops", "poi_stops.csv",
                "--gtfs", "city/gtfs", "--case", case, "--out-dir", &format!("moc{case}"),
            ],
            d,
        ));
        for f in ["parity_series.csv", "percentiles.csv", "flow_stats.csv"] {
            same(&d.join(format!("moc{case}")).join(f), &d.join(format!("out/moc_case{case}")).join(f));
        }
    }

    ok(careflow(
        &["analyze-accompaniment", "--stages", "city/stages.csv", "--genders", "genders.csv", "--out-dir", "acc"],
        d,
    ));
    for f in ["events.csv", "patterns.csv", "hourly_density.csv", "gender_vs_rate.csv", "fare_breakdown.csv"] {
        same(&d.join("acc").join(f), &d.join("out").join(f));
    }
}

#[test]
fn missing_gtfs_fails_in_ingest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_city(d);
    fs::remove_dir_all(d.join("city/gtfs")).unwrap();
    let out = careflow(&["run", "--city-dir", "city", "--out-dir", "out"], d);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ingest stage failed"), "{err}");
}

#[test]
fn ingest_check_counts_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_city(d);
    let stdout = ok(careflow(
        &["ingest-check", "--gtfs", "city/gtfs", "--pois", "city/pois.csv", "--stages", "city/stages.csv"],
        d,
    ));
    assert!(stdout.contains("gtfs: 200 stops"));
    assert!(stdout.contains("0 skipped"));
    assert!(!careflow(&["ingest-check"], d).status.success());
}

#[test]
fn stats_subcommands_write_results() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("table.csv"), "gender,moc,non_moc\nwoman,10,20\nman,20,10\n").unwrap();
    ok(careflow(&["stats", "chi2", "--in", "table.csv", "--out", "chi.csv"], d));
    let chi = fs::read_to_string(d.join("chi.csv")).unwrap();
    assert!(chi.lines().nth(1).unwrap().starts_with("6.666666666666667,1,"), "{chi}");

    fs::write(d.join("samples.csv"), "group,value\na,1\na,2\na,3\nb,2\nb,4\nb,6\n").unwrap();
    ok(careflow(&["stats", "welch", "--in", "samples.csv", "--out", "welch.csv"], d));
    let welch = fs::read_to_string(d.join("welch.csv")).unwrap();
    assert!(welch.lines().nth(1).unwrap().starts_with("a-b,3,3,2,4,-2,"), "{welch}");

    let mut rows = String::from("od_pair_id,moc_flag,in_vehicle_minutes\n");
    for g in 0..40 {
        for i in 0..10 {
            let y = 20.0 + f64::from(g % 7) * 3.0 + if i < 3 { 8.0 } else { 0.0 } + f64::from(i % 4);
            rows.push_str(&format!("G{g},{},{y}\n", u8::from(i < 3)));
        }
    }
    fs::write(d.join("obs.csv"), rows).unwrap();
    ok(careflow(&["stats", "mixed", "--in", "obs.csv", "--out", "mixed.csv", "--sample-n", "300", "--seed", "2"], d));
    let mixed = fs::read_to_string(d.join("mixed.csv")).unwrap();
    assert!(mixed.contains("observations,300,"), "{mixed}");
    assert!(mixed.contains("converged,"));
}

#[test]
fn bad_override_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = careflow(&["run", "--city-dir", "x", "--set", "no_equals_sign"], tmp.path());
    assert!(!out.status.success());
    let out = careflow(&["run", "--city-dir", "x", "--set", "bogus_key=1"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}
