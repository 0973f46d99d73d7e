use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_ddlpv");

fn ddlpv(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env("OPENBLAS_NUM_THREADS", "1").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Temp dir holding the study-1 dictionary and plant.
fn study1() -> TempDir {
    let t = tempfile::tempdir().unwrap();
    let o = ddlpv(t.path(), &["generate", "study1", "--seed", "1", "--out", "s1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    t
}

fn schema_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json")
}

const VALIDATE: &str = "
import json, sys
import jsonschema
schema = json.load(open(sys.argv[1]))
jsonschema.Draft202012Validator.check_schema(schema)
jsonschema.validate(json.load(open(sys.argv[2])), schema)
";

/// Validates with the Python `jsonschema` package; skips when it is absent.
fn assert_schema_valid(report: &Path) {
    let probe = Command::new("python3").args(["-c", "import jsonschema"]).output();
    if !probe.is_ok_and(|o| o.status.success()) {
        eprintln!("python3 with jsonschema not found; schema validation skipped");
        return;
    }
    let o = Command::new("python3").arg("-c").arg(VALIDATE).arg(schema_path()).arg(report).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn check_pe_on_minimal_dictionary() {
    let t = study1();
    let o = ddlpv(t.path(), &["check-pe", "--data", "s1/dictionary.csv"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rank"], 9);
    assert_eq!(v["is_pe"], true);
}

#[test]
fn truncated_dictionary_is_not_pe() {
    let t = study1();
    let text = std::fs::read_to_string(t.path().join("s1/dictionary.csv")).unwrap();
    let head: Vec<&str> = text.lines().take(9).collect();
    std::fs::write(t.path().join("short.csv"), head.join("\n") + "\n").unwrap();
    let o = ddlpv(t.path(), &["check-pe", "--data", "short.csv"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn malformed_csv_is_a_parse_error() {
    let t = study1();
    let text = std::fs::read_to_string(t.path().join("s1/dictionary.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = lines[3].replacen(',', ",oops", 2);
    std::fs::write(t.path().join("bad.csv"), lines.join("\n")).unwrap();
    let o = ddlpv(t.path(), &["check-pe", "--data", "bad.csv"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
}

#[test]
fn unknown_mode_is_usage_error() {
    let t = study1();
    let o = ddlpv(t.path(), &["synth", "--data", "s1/dictionary.csv", "--mode", "hinf"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&ddlpv(t.path(), &["synth", "--no-such-flag"])), 2);
}

#[test]
fn unreachable_l2_level_is_infeasible() {
    let t = study1();
    let args = ["synth", "--data", "s1/dictionary.csv", "--mode", "l2", "--q", "1,1", "--r", "1", "--gamma", "1e-3"];
    let o = ddlpv(t.path(), &args);
    assert_eq!(code(&o), 4);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["outcome"], "infeasible");
    assert!(v["synthesis"].is_null());
}

#[test]
fn robust_quadratic_report_matches_reference_gain() {
    let t = study1();
    let args = [
        "synth", "--data", "s1/dictionary.csv", "--mode", "quadratic", "--q", "1,1", "--r", "1", "--robust", "--plant",
        "s1/plant.json", "--out", "run",
    ];
    let o = ddlpv(t.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let path = t.path().join("run/report.json");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let k0: Vec<f64> = serde_json::from_value(v["synthesis"]["K"][0][0].clone()).unwrap();
    for (got, want) in k0.iter().zip([0.4832, 0.4839]) {
        assert!((got - want).abs() < 1e-2, "{k0:?}");
    }
    assert_eq!(v["verify"]["model_certifies"], true);
    assert!(v["synthesis"]["solver"]["settings"]["margin"].is_number());
    assert_schema_valid(&path);
}

#[test]
fn failed_synthesis_report_validates() {
    let t = study1();
    let o = ddlpv(
        t.path(),
        &["synth", "--data", "s1/dictionary.csv", "--mode", "h2", "--gamma", "0.1", "--out", "run"],
    );
    assert_eq!(code(&o), 4);
    assert_schema_valid(&t.path().join("run/report.json"));
}

#[test]
fn config_file_with_flag_override() {
    let t = study1();
    std::fs::write(
        t.path().join("run.toml"),
        "data = \"s1/dictionary.csv\"\nmode = \"l2\"\nq = [1.0, 1.0]\nr = [1.0]\ngamma = 1e-3\n[solver]\nmax_iter = 150\n",
    )
    .unwrap();
    assert_eq!(code(&ddlpv(t.path(), &["synth", "--config", "run.toml"])), 4);
    // the flag replaces the file's mode; stabilize ignores gamma
    let o = ddlpv(t.path(), &["synth", "--config", "run.toml", "--mode", "stabilize"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["config"]["mode"], "stabilize");
    assert_eq!(v["synthesis"]["solver"]["settings"]["max_iter"], 150);

    std::fs::write(t.path().join("typo.json"), r#"{"data": "s1/dictionary.csv", "mdoe": "l2"}"#).unwrap();
    assert_eq!(code(&ddlpv(t.path(), &["synth", "--config", "typo.json", "--mode", "l2"])), 2);
}

#[test]
fn zero_horizon_writes_header_only() {
    let t = study1();
    let synth = ["synth", "--data", "s1/dictionary.csv", "--mode", "stabilize", "--out", "run"];
    assert_eq!(code(&ddlpv(t.path(), &synth)), 0);
    let sim = [
        "simulate", "--plant", "s1/plant.json", "--controller", "run/report.json", "--horizon", "0", "--out", "traj.csv",
    ];
    assert_eq!(code(&ddlpv(t.path(), &sim)), 0);
    let text = std::fs::read_to_string(t.path().join("traj.csv")).unwrap();
    assert_eq!(text, "t,x_1,x_2,u_1,p_1,p_2\n");
}

#[test]
fn same_seed_same_bytes() {
    let t = study1();
    let synth = ["synth", "--data", "s1/dictionary.csv", "--mode", "h2", "--q", "1,1", "--r", "1", "--out", "run"];
    assert_eq!(code(&ddlpv(t.path(), &synth)), 0);
    let a = std::fs::read(t.path().join("run/report.json")).unwrap();
    assert_eq!(code(&ddlpv(t.path(), &synth)), 0);
    assert_eq!(a, std::fs::read(t.path().join("run/report.json")).unwrap());

    let sim = ["simulate", "--plant", "s1/plant.json", "--controller", "run/report.json", "--horizon", "30", "--seed", "7"];
    let first = ddlpv(t.path(), &sim);
    assert_eq!(code(&first), 0);
    assert_eq!(first.stdout, ddlpv(t.path(), &sim).stdout);
    let other = ["simulate", "--plant", "s1/plant.json", "--controller", "run/report.json", "--horizon", "30", "--seed", "8"];
    assert_ne!(first.stdout, ddlpv(t.path(), &other).stdout);

    let g1 = ddlpv(t.path(), &["generate", "study2", "--seed", "3", "--noisy"]);
    let g2 = ddlpv(t.path(), &["generate", "study2", "--seed", "3", "--noisy"]);
    assert_eq!(code(&g1), 0);
    assert!(stdout(&g1).starts_with("k,u_1,p_1,p_2,z_1"));
    assert_eq!(g1.stdout, g2.stdout);
}

#[test]
fn analyze_certifies_synthesized_gain() {
    let t = study1();
    let synth = ["synth", "--data", "s1/dictionary.csv", "--mode", "stabilize", "--out", "run"];
    assert_eq!(code(&ddlpv(t.path(), &synth)), 0);
    let o = ddlpv(t.path(), &["analyze", "--data", "s1/dictionary.csv", "--controller", "run/report.json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["command"], "analyze");
}

#[test]
fn bench_study1_summary() {
    let t = tempfile::tempdir().unwrap();
    let o = ddlpv(t.path(), &["bench", "study1", "--out", "b"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.lines().last().unwrap().starts_with("study1 seed 1: passed"), "{s}");
    assert!(t.path().join("b/report.json").exists());
    assert_eq!(code(&ddlpv(t.path(), &["bench", "study7"])), 2);
}
