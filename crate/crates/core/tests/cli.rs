use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn costnpv(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_costnpv"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("COSTNPV_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn copy_hand(dir: &Path) {
    for f in ["states.json", "subjects.csv", "events.csv"] {
        std::fs::copy(fixtures().join("hand").join(f), dir.join(f)).unwrap();
    }
}

#[test]
fn bt_on_hand_data_matches_hand_computation() {
    let out = tempfile::tempdir().unwrap();
    let data = fixtures().join("hand");
    let o = costnpv(out.path(), &["estimate", "bt", "--data", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.path().join("estimate-bt.json"));
    let npv = report["result"]["npv"].as_f64().unwrap();
    assert!((npv - 700.0 / 3.0).abs() < 1e-9, "{npv}");
    assert_eq!(report["config"]["horizon"].as_f64(), Some(2.0));
    assert!(out.path().join("estimate-bt.json.meta.json").exists());
    let stdout: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stdout, report);
}

#[test]
fn both_bt_forms_agree_on_hand_data() {
    let out = tempfile::tempdir().unwrap();
    let data = fixtures().join("hand");
    let o = costnpv(
        out.path(),
        &["estimate", "bt", "--data", data.to_str().unwrap(), "--bt-form", "survival-weighted"],
    );
    assert!(o.status.success());
    let npv = read_json(&out.path().join("estimate-bt.json"))["result"]["npv"].as_f64().unwrap();
    assert!((npv - 700.0 / 3.0).abs() < 1e-9);
}

#[test]
fn km_writes_table() {
    let out = tempfile::tempdir().unwrap();
    let data = fixtures().join("hand");
    let o = costnpv(out.path(), &["estimate", "km", "--data", data.to_str().unwrap()]);
    assert!(o.status.success());
    let table = std::fs::read_to_string(out.path().join("km.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "time,survival,at_risk");
    assert_eq!(lines.len(), 4);
}

#[test]
fn negative_cost_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    copy_hand(dir.path());
    std::fs::write(dir.path().join("events.csv"), "subject_id,time,from_state,to_state,cost\na,1,0,1,-5\n").unwrap();
    let o = costnpv(dir.path(), &["estimate", "bt", "--data", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"]["invariant"], "SchemaError");
    let msg = err["error"]["message"].as_str().unwrap();
    assert!(msg.contains("events.csv:2"), "{msg}");
    assert!(msg.contains("negative cost"), "{msg}");
}

#[test]
fn missing_censor_column_is_noted() {
    let dir = tempfile::tempdir().unwrap();
    copy_hand(dir.path());
    std::fs::write(dir.path().join("subjects.csv"), "subject_id,initial_state\na,0\nb,0\nc,0\n").unwrap();
    let o = costnpv(dir.path(), &["estimate", "km", "--data", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("estimate-km.json"));
    let notes = report["ingest"]["notes"].as_array().unwrap();
    assert!(notes.iter().any(|n| n.as_str().unwrap().contains("censor")), "{notes:?}");
}

#[test]
fn unknown_subject_rows_are_rejected_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    copy_hand(dir.path());
    std::fs::write(
        dir.path().join("events.csv"),
        "subject_id,time,from_state,to_state,cost\na,1,0,1,100\nb,2,0,1,300\nzz,1,0,1,1\n",
    )
    .unwrap();
    let o = costnpv(dir.path(), &["estimate", "bt", "--data", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let report = read_json(&dir.path().join("estimate-bt.json"));
    assert_eq!(report["ingest"]["rejected"].as_array().unwrap().len(), 1);
    assert!((report["result"]["npv"].as_f64().unwrap() - 700.0 / 3.0).abs() < 1e-9);
}

#[test]
fn missing_data_file_is_invalid_input() {
    let out = tempfile::tempdir().unwrap();
    let o = costnpv(out.path(), &["estimate", "km", "--data", "/nonexistent/dir"]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"]["invariant"], "InvalidInput");
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    let out = tempfile::tempdir().unwrap();
    let o = costnpv(out.path(), &["estimate", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_then_analyse() {
    let out = tempfile::tempdir().unwrap();
    let scenario = fixtures().join("illness_death.json");
    let o = costnpv(out.path(), &["simulate", "--scenario", scenario.to_str().unwrap(), "--n", "300"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["states.json", "subjects.csv", "events.csv", "accrual.csv", "simulate.json"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let data = out.path().to_str().unwrap();
    let o = costnpv(out.path(), &["estimate", "aj", "--data", data, "--horizon", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let aj = read_json(&out.path().join("estimate-aj.json"));
    assert!(aj["result"]["max_row_sum_error"].as_f64().unwrap() < 1e-12);

    let o = costnpv(out.path(), &["estimate", "npv", "--data", data, "--horizon", "5", "--r", "0.03"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.path().join("npv.csv").exists());

    let o = costnpv(out.path(), &["check", "--data", data, "--horizon", "5", "--r", "0.03"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(read_json(&out.path().join("check.json"))["result"]["passed"], true);
}

#[test]
fn out_dir_from_environment() {
    let out = tempfile::tempdir().unwrap();
    let data = fixtures().join("hand");
    let o = Command::new(env!("CARGO_BIN_EXE_costnpv"))
        .args(["estimate", "km", "--data", data.to_str().unwrap()])
        .env("COSTNPV_OUT_DIR", out.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.path().join("estimate-km.json").exists());
}
