use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn params(eta: f64, phi_l: f64, n_left: usize, n_right: usize) -> Value {
    json!({
        "omega31": 1.0, "omega32": 5.0, "delta_c": 0.0, "delta31": 0.0, "delta32": 0.0,
        "kappa": 5.0, "eta": eta, "phi_L": phi_l, "phi_R": std::f64::consts::PI,
        "n_left": n_left, "n_right": n_right
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn enantio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enantio"))
        .args(args)
        .output()
        .unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(k).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn missing_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = params(4.0, 0.0, 1, 0);
    p.as_object_mut().unwrap().remove("kappa");
    let cfg = write_config(dir.path(), "bad.json", &json!({ "params": p, "run": { "t_final": 1.0 } }));
    let out = enantio(&["exact", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert_eq!(err["missing_key"], "kappa");
}

#[test]
fn exact_rejects_too_many_molecules_before_computing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "big.json",
        &json!({ "params": params(4.0, 0.0, 3, 2), "run": { "t_final": 1.0 } }),
    );
    let out = enantio(&["exact", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn undriven_single_molecule_cannot_tell_chirality() {
    let dir = tempfile::tempdir().unwrap();
    let mut photons = Vec::new();
    for (name, phi) in [("left", 0.0), ("right", std::f64::consts::PI)] {
        let cfg = write_config(
            dir.path(),
            &format!("{name}.json"),
            &json!({ "params": params(0.0, phi, 1, 0), "run": { "t_final": 5.0 } }),
        );
        let out_path = dir.path().join(format!("{name}.csv"));
        let out = enantio(&[
            "exact",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        photons.push(column(&fs::read_to_string(out_path).unwrap(), "photon_mean"));
    }
    assert_eq!(photons[0].len(), photons[1].len());
    for (a, b) in photons[0].iter().zip(&photons[1]) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn manifest_config_reproduces_output_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.json",
        &json!({
            "params": params(4.0, 0.0, 1, 1),
            "run": { "t_final": 1.0, "n_trajectories": 300, "scheme": "heun", "dt": 0.01 }
        }),
    );
    let first = dir.path().join("first.csv");
    let out = enantio(&[
        "gdtwa",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "41",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest_path = dir.path().join("first.manifest.json");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 41);
    assert_eq!(manifest["config"]["run"]["master_seed"], 41);
    assert_eq!(manifest["command"], "gdtwa");

    let second = dir.path().join("second.csv");
    let out = enantio(&[
        "gdtwa",
        "--config",
        manifest_path.to_str().unwrap(),
        "--threads",
        "3",
        "--out",
        second.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    let header = fs::read_to_string(&first).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("t,re_alpha,im_alpha,m_abs2,m_abs4,photon_mean,photon_var"));
}

#[test]
fn json_output_mirrors_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.json",
        &json!({ "params": params(4.0, 0.0, 1, 0), "run": { "t_final": 0.5, "dt": 0.005 } }),
    );
    let csv = dir.path().join("a.csv");
    let js = dir.path().join("a.json");
    for (path, format) in [(&csv, "csv"), (&js, "json")] {
        let out = enantio(&[
            "exact",
            "--config",
            cfg.to_str().unwrap(),
            "--format",
            format,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let csv_text = fs::read_to_string(&csv).unwrap();
    let j: Value = serde_json::from_str(&fs::read_to_string(&js).unwrap()).unwrap();
    let from_csv = column(&csv_text, "photon_mean");
    let from_json: Vec<f64> = j["photon_mean"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(from_csv.len(), from_json.len());
    for (a, b) in from_csv.iter().zip(&from_json) {
        assert!((a - b).abs() <= 1e-11 * b.abs().max(1e-300));
    }
    assert!(csv_text.starts_with("t,photon_mean,photon_sq_mean,P1_m0,P2_m0,P3_m0\n"));
}

#[test]
fn exact_sweep_writes_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.json",
        &json!({
            "params": params(4.0, 0.0, 0, 0),
            "run": { "engine": "exact_me", "t_final": 4.0, "dt": 0.005, "tol": 1.0, "window": 1.0 },
            "excess": { "n_total": 2, "min": -1.0, "max": 1.0 }
        }),
    );
    let out_path = dir.path().join("sweep.csv");
    let out = enantio(&[
        "sweep-excess",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&out_path).unwrap();
    assert!(text.starts_with("P,N_L,N_R,photon_ss,photon_var_ss,dP"));
    assert_eq!(text.lines().count(), 4);
    assert_eq!(column(&text, "N_R"), vec![0.0, 1.0, 2.0]);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sweep.manifest.json")).unwrap()).unwrap();
    assert!(manifest["summary"]["min_uncertainty"].is_number());
}

#[test]
fn validate_passes_on_two_molecule_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "validate.json",
        &json!({ "params": params(4.0, 0.0, 1, 1), "run": { "t_final": 10.0 } }),
    );
    let out_path = dir.path().join("report.json");
    let out = enantio(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--trajectories",
        "10000",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    let report: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["verdict"], "pass", "{report}");
    assert_eq!(out.status.code(), Some(0));
    assert!(report["points"].as_u64().unwrap() >= 200);
}

#[test]
fn failed_validation_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    // two trajectories at a coarse step cannot track the exact curve
    let cfg = write_config(
        dir.path(),
        "validate.json",
        &json!({
            "params": params(4.0, 0.0, 1, 0),
            "run": { "t_final": 2.0, "n_trajectories": 2, "dt": 0.01 }
        }),
    );
    let out_path = dir.path().join("report.json");
    let out = enantio(&["validate", "--config", cfg.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let report: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["verdict"], "fail");
}
