use std::path::{Path, PathBuf};

use gfc_cli::run;
use gfc_core::presets::named;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn simulate(dgp: &str, units: usize, horizon: usize, seed: u64, out: &Path) -> i32 {
    run([
        "gfc".to_string(),
        "simulate".into(),
        "--dgp".into(),
        dgp.into(),
        "--units".into(),
        units.to_string(),
        "--horizon".into(),
        horizon.to_string(),
        "--seed".into(),
        seed.to_string(),
        "--out".into(),
        s(out),
    ])
}

fn analysis(cmd: &str, sim: &Path, config: &str, out: &Path, extra: &[String]) -> i32 {
    let mut args = vec![
        "gfc".to_string(),
        cmd.into(),
        "--panel".into(),
        s(&sim.join("panel.csv")),
        "--schema".into(),
        s(&sim.join("schema.json")),
        "--config".into(),
        s(&configs().join("analysis").join(format!("{config}.json"))),
        "--seed".into(),
        "1".into(),
        "--out".into(),
        s(out),
    ];
    args.extend_from_slice(extra);
    run(args)
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_deterministic_panel() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(simulate("null-effect", 10, 50, 4, &a), 0);
    assert_eq!(simulate("null-effect", 10, 50, 4, &b), 0);
    let panel = std::fs::read_to_string(a.join("panel.csv")).unwrap();
    assert_eq!(panel.lines().count(), 501);
    for f in ["panel.csv", "schema.json", "dgp.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_seed_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let code = run(["gfc", "simulate", "--dgp", "null-effect", "--units", "5", "--horizon", "20", "--out", &s(tmp.path())]);
    assert_eq!(code, 2);
}

#[test]
fn unknown_preset_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(simulate("no-such-process", 5, 20, 1, tmp.path()), 2);
}

#[test]
fn estimate_on_null_effect_covers_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(simulate("null-effect", 20, 200, 2, &sim), 0);
    let out = tmp.path().join("est");
    assert_eq!(analysis("estimate", &sim, "one-day", &out, &[]), 0);
    let r = report(&out);
    let (v, se) = (r["value"].as_f64().unwrap(), r["se"].as_f64().unwrap());
    assert!(v.abs() <= 3.0 * se, "{v} {se}");
    for f in ["contributions.csv", "plot.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn adjustment_on_tdc_panel_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(simulate("tdc-on", 20, 300, 1, &sim), 0);
    let out = tmp.path().join("est");
    let extra = ["--mode".to_string(), "adjustment".into()];
    assert_eq!(analysis("estimate", &sim, "tdc-on", &out, &extra), 0);
    let warnings = report(&out)["warnings"].clone();
    assert!(warnings.as_array().unwrap().iter().any(|w| w == "tdc-suspected"), "{warnings}");
}

#[test]
fn off_support_forecast_exits_with_overlap_code() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(simulate("overlap-gap", 20, 60, 1, &sim), 0);
    let extra = ["--scenario".to_string(), s(&configs().join("scenarios/off-support.json"))];
    assert_eq!(analysis("forecast", &sim, "one-day", &tmp.path().join("fc"), &extra), 4);
}

#[test]
fn report_verify_replays_run() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(simulate("exposure", 10, 40, 3, &sim), 0);
    let out = tmp.path().join("aee");
    let extra = ["--policy".to_string(), s(&configs().join("policies/point-mass.json"))];
    assert_eq!(analysis("expose", &sim, "one-day", &out, &extra), 0);
    assert_eq!(run(["gfc", "report", "--run", &s(&out), "--verify"]), 0);
    std::fs::write(out.join("erf.csv"), "tampered\n").unwrap();
    assert_ne!(run(["gfc", "report", "--run", &s(&out), "--verify"]), 0);
}

#[test]
fn validate_single_criterion() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    assert_eq!(run(["gfc", "validate", "--only", "3", "--out", &s(&out)]), 0);
    let junit = std::fs::read_to_string(out.join("junit.xml")).unwrap();
    assert!(junit.contains("tests=\"1\" failures=\"0\""), "{junit}");
    assert!(out.join("summary.txt").is_file());
}

#[test]
fn validate_without_configs_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    let code = run(["gfc", "validate", "--only", "3", "--configs", &s(&missing), "--out", &s(&tmp.path().join("v"))]);
    assert_eq!(code, 2);
}

#[test]
fn tampered_oracle_cap_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let code = run(["gfc", "validate", "--only", "2", "--oracle-cap", "1", "--out", &s(&tmp.path().join("v"))]);
    assert_eq!(code, 5);
}

#[test]
fn bundled_dgp_configs_match_presets() {
    for entry in std::fs::read_dir(configs().join("dgp")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_stem().unwrap().to_str().unwrap().to_string();
        let mut want = serde_json::to_string_pretty(&named(&name).unwrap()).unwrap();
        want.push('\n');
        assert_eq!(std::fs::read_to_string(&path).unwrap(), want, "{name}");
    }
}
