use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_buck-adrc"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn validate_accepts_empty_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.json", "{}");
    let out = cli(&["validate", "--spec", &spec]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}

#[test]
fn bad_parameter_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.json", r#"{"observer": {"alpha": 0.5}}"#);
    let out = cli(&["validate", "--spec", &spec]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha must exceed 1"));
}

#[test]
fn unknown_field_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.json", r#"{"controller": {"kk": 3}}"#);
    let out = cli(&["validate", "--spec", &spec]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("controller"));
}

#[test]
fn bode_with_empty_tau_list() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.json",
        r#"{"bode": {"points": 20, "levels": [1, 3]}}"#,
    );
    let out_dir = dir.path().join("bode");
    let out = cli(&[
        "bode",
        "--spec",
        &spec,
        "--out",
        out_dir.to_str().unwrap(),
        "--lpf-taus",
        "",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "g_uy_p1.csv",
            "g_uy_p3.csv",
            "g_zn_p1.csv",
            "g_zn_p3.csv",
            "markers.json"
        ]
    );
}

#[test]
fn bad_tau_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.json", "{}");
    let out_dir = dir.path().join("bode");
    let out = cli(&[
        "bode",
        "--spec",
        &spec,
        "--out",
        out_dir.to_str().unwrap(),
        "--lpf-taus",
        "1e-3,x",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.json",
        r#"{"sim": {"duration": 0.05}, "ripple_window": [0.0, 0.05], "bode": {"enabled": false}}"#,
    );
    let out_dir = dir.path().join("out");
    let out = cli(&[
        "simulate",
        "--spec",
        &spec,
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("runs/base_seed-7.csv").exists());
    assert!(out_dir.join("aggregate.csv").exists());
}

#[test]
fn divergence_exits_with_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.json",
        r#"{
            "observer": {"levels": 1, "b_hat": -2.0e6},
            "controller": {"b_hat": -2.0e6, "duty_min": -1e12, "duty_max": 1e12},
            "noise": {"amplitude": 0.0},
            "ripple_window": [0.0, 3.0],
            "bode": {"enabled": false}
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = cli(&[
        "simulate",
        "--spec",
        &spec,
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "0",
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
