use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const OUTPUTS: [&str; 4] = ["sensor_log.csv", "state_log.csv", "walkway.csv", "summary.csv"];

fn kneesim() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kneesim"));
    cmd.env_remove("KNEESIM_CONFIG_DIR");
    cmd
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn kneesim")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate(dir: &Path, extra: &[&str]) -> Output {
    let out = run(kneesim()
        .args(["simulate", "--out-dir"])
        .arg(dir)
        .args(extra));
    assert!(out.status.success(), "{}", stderr(&out));
    out
}

#[test]
fn simulate_writes_four_logs_byte_identically() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["--duration", "60", "--seed", "7"];
    let first = simulate(a.path(), &args);
    simulate(b.path(), &args);
    for name in OUTPUTS {
        let left = fs::read(a.path().join(name)).unwrap();
        assert!(!left.is_empty(), "{name}");
        assert_eq!(left, fs::read(b.path().join(name)).unwrap(), "{name} differs between runs");
    }
    let table = String::from_utf8(first.stdout).unwrap();
    assert!(table.contains("AboveKnee"), "{table}");
}

#[test]
fn seed_changes_the_sensor_log() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(a.path(), &["--duration", "2", "--seed", "1"]);
    simulate(b.path(), &["--duration", "2", "--seed", "2"]);
    let name = "sensor_log.csv";
    assert_ne!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
}

#[test]
fn missing_config_exits_with_code_two() {
    let out = run(kneesim().args(["simulate", "--config", "/definitely/not/here.toml"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/definitely/not/here.toml"), "{}", stderr(&out));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "placement = \"AboveKnee\"\n[participant]\nid = \"X\"\nbody_mass = -3.0\nheight = 170.0\n").unwrap();
    let out = run(kneesim().args(["simulate", "--config"]).arg(&path));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("participant"), "{}", stderr(&out));
}

#[test]
fn config_dir_env_var_supplies_the_default() {
    let cfg_dir = tempfile::tempdir().unwrap();
    fs::write(cfg_dir.path().join("session.toml"), "placement = \"BelowKnee\"\n").unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let out = run(kneesim()
        .env("KNEESIM_CONFIG_DIR", cfg_dir.path())
        .args(["simulate", "--duration", "1", "--out-dir"])
        .arg(out_dir.path()));
    assert!(out.status.success(), "{}", stderr(&out));
    let log = fs::read_to_string(out_dir.path().join("sensor_log.csv")).unwrap();
    assert!(log.starts_with("# kneesim sensor_log v1 placement=BelowKnee"), "{}", &log[..60]);

    let empty = tempfile::tempdir().unwrap();
    let out = run(kneesim()
        .env("KNEESIM_CONFIG_DIR", empty.path())
        .args(["simulate", "--duration", "1", "--out-dir"])
        .arg(out_dir.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("session.toml"), "{}", stderr(&out));
}

fn assert_close(path: &str, got: &Value, want: &Value) {
    match (got, want) {
        (Value::Object(g), Value::Object(w)) => {
            assert_eq!(g.len(), w.len(), "{path}: keys {:?} vs {:?}", g.keys(), w.keys());
            for (k, wv) in w {
                let gv = g.get(k).unwrap_or_else(|| panic!("{path}.{k} missing"));
                assert_close(&format!("{path}.{k}"), gv, wv);
            }
        }
        (Value::Array(g), Value::Array(w)) => {
            assert_eq!(g.len(), w.len(), "{path}");
            for (i, (gv, wv)) in g.iter().zip(w).enumerate() {
                assert_close(&format!("{path}[{i}]"), gv, wv);
            }
        }
        (Value::Number(g), Value::Number(w)) => {
            let (g, w) = (g.as_f64().unwrap(), w.as_f64().unwrap());
            assert!((g - w).abs() <= 1e-9 * w.abs().max(1e-3), "{path}: {g} vs {w}");
        }
        _ => assert_eq!(got, want, "{path}"),
    }
}

#[test]
fn analyze_fixture_matches_golden_output() {
    let out = run(kneesim()
        .args(["analyze", "--json", "--walkway"])
        .arg(fixture("walkway_trial1.csv"))
        .arg("--walkway")
        .arg(fixture("walkway_trial2.csv")));
    assert!(out.status.success(), "{}", stderr(&out));
    let got: Value = serde_json::from_slice(&out.stdout).unwrap();
    let want: Value = serde_json::from_str(&fs::read_to_string(fixture("golden_analyze.json")).unwrap()).unwrap();
    assert_close("report", &got, &want);
}

#[test]
fn analyze_text_report_lists_each_trial() {
    let out = run(kneesim()
        .args(["analyze", "--placement", "BelowKnee", "--walkway"])
        .arg(fixture("walkway_trial1.csv")));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("walkway_trial1.csv: speed 1.037 m/s"), "{text}");
    assert!(text.contains("BelowKnee"), "{text}");
}

#[test]
fn empty_walkway_reports_insufficient_steps() {
    let out = run(kneesim().args(["analyze", "--walkway"]).arg(fixture("walkway_empty.csv")));
    assert!(!out.status.success());
    assert!(stderr(&out).contains("insufficient steps"), "{}", stderr(&out));
}

#[test]
fn placement_mismatch_is_refused() {
    let out = run(kneesim()
        .args(["analyze", "--placement", "AboveKnee", "--walkway"])
        .arg(fixture("walkway_trial1.csv")));
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("placement mismatch") && err.contains("BelowKnee"), "{err}");
}

#[test]
fn schema_violation_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("walkway.csv");
    let text = fs::read_to_string(fixture("walkway_trial1.csv")).unwrap();
    fs::write(&path, text.replacen("t_liftoff", "t_off", 1)).unwrap();
    let out = run(kneesim().args(["analyze", "--walkway"]).arg(&path));
    assert!(!out.status.success());
    assert!(stderr(&out).contains("'t_liftoff'"), "{}", stderr(&out));

    fs::write(&path, text.replacen(",Right", ",Middle", 1)).unwrap();
    let out = run(kneesim().args(["analyze", "--walkway"]).arg(&path));
    assert!(stderr(&out).contains("'side'"), "{}", stderr(&out));
}

#[test]
fn analyze_simulated_logs_includes_kinematics() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &["--duration", "20"]);
    let p = |n: &str| dir.path().join(n);
    let out = run(kneesim()
        .args(["analyze", "--json", "--walkway"])
        .arg(p("walkway.csv"))
        .arg("--sensor-log")
        .arg(p("sensor_log.csv"))
        .arg("--state-log")
        .arg(p("state_log.csv")));
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rom = report["kinematics"]["rom"]["mean"].as_f64().unwrap();
    assert!((rom - 75.8).abs() < 2.0, "{rom}");
    assert_eq!(report["summary"]["placement"], "AboveKnee");
}

#[test]
fn shipped_config_equals_the_built_in_default() {
    let out = run(kneesim().arg("default-config"));
    assert!(out.status.success());
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/session.toml");
    assert_eq!(String::from_utf8(out.stdout).unwrap(), fs::read_to_string(shipped).unwrap());
}

#[test]
fn serve_reports_bind_failure() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = run(kneesim().args(["serve", "--duration", "1", "--port", &port]));
    assert!(!out.status.success());
    assert!(stderr(&out).contains(&port), "{}", stderr(&out));
}

#[test]
fn shipped_script_runs() {
    let dir = tempfile::tempdir().unwrap();
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/stairs.script");
    simulate(dir.path(), &["--duration", "45", "--script", script.to_str().unwrap()]);
    let state = fs::read_to_string(dir.path().join("state_log.csv")).unwrap();
    for mode in ["StairAscent", "SitStand"] {
        assert!(state.contains(mode), "{mode} never active");
    }
}
