use std::path::Path;
use std::process::{Command, Output};

fn varda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varda"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"
[model]
n = 20

[observations]
per_window = 10

[experiment]
windows = 4
outer = 2
spinup_steps = 20
"#;

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let res = varda(&["run", &cfg, "--out", out.to_str().unwrap(), "--max-inner", "5", "--seed", "3"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["experiment"]["seed"], 3);
    assert_eq!(summary["config"]["solver"]["max_inner"], 5);
    assert_eq!(summary["outer"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(out.join("inner.csv")).unwrap();
    assert!(csv.starts_with("outer_idx,inner_idx,residual_norm,quadratic_cost"));
    assert_eq!(csv.lines().count(), 1 + 2 * 6);
}

#[test]
fn route_and_outer_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let res = varda(&[
        "run", &cfg, "--out", out.to_str().unwrap(), "--route", "dual-rpcg", "--outer", "1",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(out.join("summary.json")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(summary["config"]["solver"]["route"], "dual-rpcg");
    assert_eq!(summary["outer"].as_array().unwrap().len(), 1);
}

#[test]
fn verify_default_model() {
    let res = varda(&["verify"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn oracle_small_instance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\nkind = \"advection\"\nn = 10\n[observations]\nper_window = 5\n[experiment]\nwindows = 3\nspinup_steps = 0\n",
    );
    let res = varda(&["oracle", &cfg]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    for row in report["routes"].as_array().unwrap() {
        assert!(row["relative_error"].as_f64().unwrap() < 1e-8, "{row}");
    }
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nsize = 3\n");
    let res = varda(&["run", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));

    let res = varda(&["verify", "--route", "sideways"]);
    assert!(!res.status.success());

    let res = varda(&["run", "/nonexistent/exp.toml"]);
    assert_eq!(res.status.code(), Some(2));
}
