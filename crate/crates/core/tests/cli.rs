use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eir-eq")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn solve_writes_solution_profits_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data("single_generator.json");
    let o = run(&[
        "solve", "--config", cfg.to_str().unwrap(), "--design", "emir", "--k", "12", "--fer", "90",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["solution.json", "profits.csv", "report.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "converged");
    assert_eq!(report["certification"]["certified"], true);
    let csv = std::fs::read_to_string(dir.path().join("profits.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "agent,scenario_1,scenario_2");
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn energy_only_day_ahead_price() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data("single_generator.json");
    let o = run(&[
        "solve", "--config", cfg.to_str().unwrap(), "--design", "emo", "--tol", "1e-9",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let sol: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    let lam = sol["variables"]["lam_da"].as_f64().unwrap();
    assert!((lam - 12.5).abs() < 1e-7, "{lam}");

    let v = run(&[
        "verify", "--config", cfg.to_str().unwrap(), "--design", "emo", "--solution",
        dir.path().join("solution.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&v), 0, "{}", stdout(&v));
    assert!(stdout(&v).contains("certified: true"));
}

#[test]
fn tampered_solution_fails_certification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data("single_generator.json");
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["solve", "--config", cfg.to_str().unwrap(), "--design", "emo", "--out", out])), 0);
    let path = dir.path().join("solution.json");
    let mut sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    sol["variables"]["lam_da"] = serde_json::json!(20.0);
    std::fs::write(&path, sol.to_string()).unwrap();
    let v = run(&["verify", "--config", cfg.to_str().unwrap(), "--design", "emo", "--solution", path.to_str().unwrap()]);
    assert_eq!(code(&v), 3);
}

#[test]
fn invalid_config_lists_violations() {
    let o = run(&["solve", "--config", data("invalid.json").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("scenarios.pi"), "{err}");
    assert!(err.contains("generators[0].alpha"), "{err}");

    let v = run(&["validate", "--config", data("invalid.json").to_str().unwrap()]);
    assert_eq!(code(&v), 1);
    let ok = run(&["validate", "--config", data("two_generator.json").to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
}

#[test]
fn missing_and_malformed_inputs() {
    assert_eq!(code(&run(&["solve", "--config", "/nonexistent.json"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{").unwrap();
    assert_eq!(code(&run(&["solve", "--config", p.to_str().unwrap()])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn alpha_sweep_over_two_designs() {
    let o = run(&[
        "sweep", "--config", data("two_generator.json").to_str().unwrap(), "--sweep", "alpha", "--grid",
        "1.0:0.1:-0.1", "--designs", "emo,emir",
    ]);
    assert!(matches!(code(&o), 0 | 2 | 3));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1 + 20);
    assert!(out.lines().next().unwrap().starts_with("design,alpha,"));
}

#[test]
fn strike_sweep_writes_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep", "--sweep", "k", "--grid", "0:100:10", "--alpha", "0.6", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(matches!(code(&o), 0 | 2 | 3));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 11);
}

#[test]
fn sweep_rejects_unknown_design_and_bad_grid() {
    let base = ["sweep", "--sweep", "alpha", "--grid"];
    let o = run(&[&base[..], &["1:0.5:-0.5", "--designs", "emx"]].concat());
    assert_eq!(code(&o), 1);
    let o = run(&[&base[..], &["1:0.5"]].concat());
    assert_eq!(code(&o), 1);
    let o = run(&[&base[..], &["0:1:-0.1"]].concat());
    assert_eq!(code(&o), 1);
}

#[test]
fn reproduce_tables() {
    let five = run(&["reproduce", "--table", "5"]);
    assert_eq!(code(&five), 0);
    assert!(stdout(&five).contains("overall: PASS"));

    let eleven = run(&["reproduce", "--table", "11"]);
    assert_eq!(code(&eleven), 0);
    assert!(stdout(&eleven).contains("overall: PASS"));

    let four = run(&["reproduce", "--table", "4"]);
    assert_eq!(code(&four), 0);
    let text = stdout(&four);
    assert!(text.contains("overall: PASS"), "{text}");
    assert!(text.contains("(225, -225)"), "{text}");

    let unknown = run(&["reproduce", "--table", "8"]);
    assert_eq!(code(&unknown), 1);
    assert_eq!(code(&run(&["reproduce", "--figure", "6"])), 1);
}

#[test]
fn reproduce_table_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["reproduce", "--table", "5", "--out", out])), 0);
    let csv = std::fs::read_to_string(dir.path().join("table_5.csv")).unwrap();
    assert!(csv.starts_with("row,column,computed,reference,abs_delta"));
    assert_eq!(code(&run(&["reproduce", "--table", "5", "--out", out, "--format", "json"])), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("table_5.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
}

#[test]
fn figure_series() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "--figure", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("figure_3.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "alpha,emo_total_v_da,emir_total_v_da");
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn property_suite_from_cli() {
    let o = run(&["verify", "--suite", "marginal_pricing", "--instances", "10"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("passed   10"));
    assert_eq!(code(&run(&["verify", "--suite", "nope"])), 1);
}

#[test]
fn outputs_are_deterministic() {
    let a = run(&["sweep", "--sweep", "k", "--grid", "0:40:20", "--alpha", "0.6", "--seed", "3"]);
    let b = run(&["sweep", "--sweep", "k", "--grid", "0:40:20", "--alpha", "0.6", "--seed", "3"]);
    assert_eq!(stdout(&a), stdout(&b));
}
