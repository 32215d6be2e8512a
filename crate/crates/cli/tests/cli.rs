use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cph")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cph(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth(dir: &Path, seed: &str) {
    let out = dir.to_str().unwrap();
    ok(&["synth", "--regions", "50", "--diseases", "3", "--years", "10", "--seed", seed, "--out", out]);
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "7");
    synth(&b, "7");
    for f in ["regions.csv", "morbidity.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(lines(&a.join("regions.csv")), 51);
    assert_eq!(lines(&a.join("morbidity.csv")), 1 + 50 * 3 * 10);

    let c = tmp.path().join("c");
    synth(&c, "8");
    assert_ne!(fs::read(a.join("morbidity.csv")).unwrap(), fs::read(c.join("morbidity.csv")).unwrap());
}

#[test]
fn experiment_record_count_matches_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "1");
    let out = tmp.path().join("rep");
    ok(&[
        "experiment",
        "--data",
        data.to_str().unwrap(),
        "--methods",
        "random,rmdc",
        "--completers",
        "ucf,icf,blend",
        "--seeds",
        "0,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let pooled = csv.lines().skip(1).filter(|l| l.split(',').nth(5) == Some("ALL")).count();
    assert_eq!(pooled, 9 * 3 * 2 * 2);
    let per_disease = csv.lines().count() - 1 - pooled;
    assert_eq!(per_disease, pooled * 3);

    let json = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(json.contains("\"provenance\""));
    assert_eq!(json.matches("\"disease\": \"ALL\"").count(), pooled);
}

#[test]
fn experiment_reads_flat_config_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "2");
    let config = tmp.path().join("grid.toml");
    fs::write(&config, "seeds = [0]\ncompleters = [\"ucf\"]\nproportions = [0.2, 0.4]\nwindow-size = 3\n").unwrap();
    let out = tmp.path().join("rep");
    let args = |extra: &[&'static str]| {
        let mut v = vec!["experiment", "--data", data.to_str().unwrap(), "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let a = args(&[]);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",ALL,")).count(), 2);
    assert!(fs::read_to_string(out.join("report.json")).unwrap().contains("\"window_size\": 3"));

    let b = args(&["--proportions", "0.5"]);
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",ALL,")).count(), 1);
}

#[test]
fn hotd_predicts_exactly_the_hidden_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "3");
    let pred = tmp.path().join("pred.csv");
    ok(&[
        "complete",
        "--data",
        data.to_str().unwrap(),
        "--algo",
        "hotd",
        "--hide-fraction",
        "0.1",
        "--seed",
        "5",
        "--out",
        pred.to_str().unwrap(),
    ]);
    // 10% of the 1500 observed entries.
    assert_eq!(lines(&pred) - 1, 150);
    let text = fs::read_to_string(&pred).unwrap();
    assert!(text.starts_with("region_id,disease,year,predicted\n"));
    for line in text.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn complete_from_target_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "4");
    // Drop two rows so those cells are unobserved.
    let morbidity = data.join("morbidity.csv");
    let text = fs::read_to_string(&morbidity).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("R0003,D2,2018") && !l.starts_with("R0010,D1,2015")).collect();
    fs::write(&morbidity, kept.join("\n") + "\n").unwrap();
    let targets = tmp.path().join("targets.csv");
    fs::write(&targets, "region_id,disease,year\nR0010,D1,2015\nR0003,D2,2018\n").unwrap();
    let pred = tmp.path().join("pred.csv");
    ok(&[
        "complete",
        "--data",
        data.to_str().unwrap(),
        "--algo",
        "blend",
        "--targets",
        targets.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    let rows: Vec<String> = fs::read_to_string(&pred).unwrap().lines().skip(1).map(|l| l.rsplitn(2, ',').nth(1).unwrap().to_string()).collect();
    assert_eq!(rows, ["R0003,D2,2018", "R0010,D1,2015"]);
}

#[test]
fn select_and_correlate_write_expected_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "5");
    let sel = tmp.path().join("sel.csv");
    ok(&[
        "select",
        "--data",
        data.to_str().unwrap(),
        "--method",
        "rmdc",
        "--proportion",
        "0.2",
        "--seed",
        "0",
        "--out",
        sel.to_str().unwrap(),
    ]);
    assert_eq!(lines(&sel), 11);

    let corr = tmp.path().join("corr");
    ok(&["correlate", "--data", data.to_str().unwrap(), "--disease", "D2", "--out", corr.to_str().unwrap()]);
    assert_eq!(lines(&corr.join("spatial_profile.csv")), 1 + 53 * 4);
    assert_eq!(lines(&corr.join("temporal_grid.csv")), 1 + 10 * 10 * 4);
}

#[test]
fn failures_are_single_line_with_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cph(&["select", "--data", tmp.path().to_str().unwrap(), "--method", "random", "--proportion", "0.5", "--seed", "0", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: io: "), "{err}");

    let data = tmp.path().join("data");
    synth(&data, "6");
    let out = cph(&["select", "--data", data.to_str().unwrap(), "--method", "random", "--proportion", "1.5", "--seed", "0", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: selection: "));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cph(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cph(&["synth", "--regions", "5", "--out", "x"]).status.code(), Some(2));
    assert_eq!(cph(&["select", "--bogus"]).status.code(), Some(2));
}
