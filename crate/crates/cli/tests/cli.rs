use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bellsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bellsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let mut all = args.to_vec();
    all.extend(["--format", "json"]);
    let out = bellsim(&all);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn f(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

#[test]
fn chsh_ideal_run_lands_near_tsirelson() {
    let v = json(&[
        "chsh",
        "--ideal",
        "--events-per-setting",
        "100000",
        "--seed",
        "42",
    ]);
    for e in v["results"]["bell"].as_array().unwrap() {
        let b = f(&e["b"]);
        assert!((2.79..=2.87).contains(&b), "B = {b}");
    }
    assert_eq!(v["seed"], 42);
    assert_eq!(v["config"]["chsh"]["detector"]["atom_bright_error"], 0.0);
}

#[test]
fn chsh_fixture_reports_published_signals() {
    let v = json(&["chsh", "--table1-fixture"]);
    let bell = v["results"]["bell"].as_array().unwrap();
    assert!((f(&bell[0]["b"]) - 2.203).abs() < 5e-4);
    assert!((f(&bell[1]["b"]) - 2.218).abs() < 5e-4);
    assert_eq!(v["results"]["settings"].as_array().unwrap().len(), 8);
}

#[test]
fn malformed_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let out = dir.path().join("out.csv");
    for text in [
        "{\"chsh\": {\"events\": 10}}",
        "{not json",
        "{\"seed\": -1}",
    ] {
        std::fs::write(&cfg, text).unwrap();
        let r = bellsim(&[
            "chsh",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ]);
        assert_eq!(r.status.code(), Some(2), "{text}");
        assert!(!out.exists());
        assert!(!r.stderr.is_empty());
    }
    let r = bellsim(&[
        "lhv",
        "--config",
        dir.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn invalid_values_are_configuration_errors() {
    for args in [
        &["chsh", "--werner-p", "1.5"][..],
        &["chsh", "--events-per-setting", "1"],
        &["lhv", "--grid", "4"],
        &["bounds", "--fidelity", "2"],
        &["swap", "--nodes", "1"],
        &["swap", "--trials", "0"],
        &["loopholes", "--separation", "-3"],
        &["lhv", "--threads", "0"],
        &["frobnicate"],
    ] {
        assert_eq!(bellsim(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn dead_detectors_are_rejected() {
    let out = bellsim(&[
        "chsh",
        "--pmt-efficiency-1",
        "0",
        "--pmt-efficiency-2",
        "0",
        "--events-per-setting",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert!(out.stdout.is_empty());
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("missing").join("out.csv");
    let out = bellsim(&["loopholes", "--output", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot write"));
}

#[test]
fn bounds_examples() {
    let v = json(&[
        "bounds",
        "--fidelity",
        "0.87",
        "--restarts",
        "8",
        "--iterations",
        "2000",
    ]);
    let r = &v["results"];
    assert!((f(&r["closed_form"]["b_min"]) - 2.0930).abs() < 5e-5);
    assert!((f(&r["closed_form"]["b_max"]) - 2.4607).abs() < 5e-5);
    assert!(f(&r["max_disagreement"]) <= 1e-3);

    let v = json(&[
        "bounds",
        "--fidelity",
        "1",
        "--restarts",
        "4",
        "--iterations",
        "500",
    ]);
    let r = &v["results"];
    for k in ["b_min", "b_max"] {
        assert!((f(&r["closed_form"][k]) - 2.82843).abs() < 1e-5);
        assert!((f(&r["numeric"][k]) - 2.82843).abs() < 1e-5);
    }

    let out = bellsim(&[
        "bounds",
        "--fidelity",
        "0.3",
        "--restarts",
        "4",
        "--iterations",
        "500",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("# warning:"));
}

#[test]
fn lhv_examples() {
    let v = json(&["lhv"]);
    let r = &v["results"];
    assert_eq!(f(&r["local_max_b"]), 2.0);
    assert_eq!(r["strategies"].as_array().unwrap().len(), 16);
    assert!((f(&r["scan"]["max_b"]) - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-9);
    let v = json(&["lhv", "--grid", "8"]);
    assert!(f(&v["results"]["scan"]["max_b"]) <= 2.0 * std::f64::consts::SQRT_2 + 1e-12);
    // Stable key order in the emitted text.
    let text = String::from_utf8(bellsim(&["lhv", "--format", "json"]).stdout).unwrap();
    let first = &text[text.find("\"strategies\"").unwrap()..];
    assert_in_order(
        first,
        &[
            "\"index\"",
            "\"a1\"",
            "\"a2\"",
            "\"b1\"",
            "\"b2\"",
            "\"b\":",
        ],
    );
}

#[test]
fn loopholes_examples() {
    let r = &json(&["loopholes"])["results"];
    assert_eq!(r["locality"]["closed"], false);
    assert!((f(&r["locality"]["required_separation"]) - 37474.06).abs() < 0.01);
    let r = &json(&["loopholes", "--detection-time", "50e-6"])["results"];
    assert!((f(&r["locality"]["required_separation"]) / 1000.0 - 15.0).abs() < 0.05);
    let r = &json(&[
        "loopholes",
        "--separation",
        "15000",
        "--detection-time",
        "50e-6",
        "--grid",
    ])["results"];
    assert_eq!(r["locality"]["closed"], true);
    assert_eq!(f(&r["locality"]["midpoint_distance"]), 7500.0);
    assert!(!r["feasibility"].as_array().unwrap().is_empty());
    let survival: Vec<f64> = r["survival"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| f(&s["survival"]))
        .collect();
    assert!(survival.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn swap_examples() {
    let r = &json(&["swap", "--trials", "100000"])["results"];
    assert!((f(&r["success_rate"]) - 0.5).abs() <= 0.005);
    for b in r["branches"].as_array().unwrap() {
        assert!(f(&b["fidelity"]) >= 0.999);
    }
    assert!((f(&r["latency"]["expected_seconds"]) - 0.60).abs() < 0.01);

    let r = &json(&["swap", "--werner-p", "0.82667", "--trials", "1000"])["results"];
    let input = f(&r["input_bell_signal"]);
    for b in r["branches"].as_array().unwrap() {
        assert!(f(&b["bell_signal"]) <= input);
    }
    let r = &json(&[
        "swap",
        "--trials",
        "10",
        "--nodes",
        "3",
        "--attempt-rate",
        "1",
        "--success-probability",
        "0.5",
    ])["results"];
    assert!((f(&r["latency"]["expected_seconds"]) - 8.0 / 3.0).abs() < 1e-12);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 5, "format": "json", "lhv": {"grid": 12}}"#,
    )
    .unwrap();
    let path = cfg.to_str().unwrap();
    let out = bellsim(&["lhv", "--config", path]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 5);
    assert_eq!(v["results"]["scan"]["resolution"], 12);
    let out = bellsim(&[
        "lhv", "--config", path, "--grid", "16", "--seed", "6", "--format", "csv",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# tool: bellsim"));
    assert!(text.contains("# seed: 6\n"));
    assert!(text.contains("\"grid\":16"));
}

#[test]
fn csv_layout() {
    let out = bellsim(&["loopholes", "--seed", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# tool: bellsim "));
    assert_eq!(lines[1], "# command: loopholes");
    assert_eq!(lines[2], "# seed: 3");
    assert!(lines[3].starts_with("# config: {"));
    assert!(text.contains("# table: locality\nseparation,detection_time,rotation_time,required_separation,closed,midpoint_distance\n1.1,0.000125,0,37474.1,false,0.55\n"));
}

#[test]
fn json_report_round_trips_through_the_config_parser() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let out = bellsim(&[
        "swap",
        "--trials",
        "5000",
        "--seed",
        "77",
        "--format",
        "json",
        "--output",
        first.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&first).unwrap();
    assert_in_order(
        &text,
        &[
            "\"tool\"",
            "\"version\"",
            "\"command\"",
            "\"seed\"",
            "\"warnings\"",
            "\"config\"",
            "\"results\"",
        ],
    );
    let v: Value = serde_json::from_str(&text).unwrap();
    let replay = dir.path().join("replay.json");
    write_config(&replay, &v["config"]);
    let out = bellsim(&["swap", "--config", replay.to_str().unwrap()]);
    assert_eq!(out.stdout, std::fs::read(&first).unwrap());
}

fn assert_in_order(text: &str, keys: &[&str]) {
    let pos: Vec<usize> = keys
        .iter()
        .map(|k| text.find(k).unwrap_or_else(|| panic!("{k} missing")))
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{keys:?} at {pos:?}");
}

fn write_config(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}
