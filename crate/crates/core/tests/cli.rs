//! End-to-end tests of the `darkspace` binary.

use std::path::Path;
use std::process::{Command, Output};

fn darkspace(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_darkspace"))
        .args(args)
        .current_dir(dir)
        .env_remove("DARKSPACE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn spin32_purity_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = darkspace(dir.path(), &["spin32-purity", "--gammaT", "200", "--n0", "0,0,1", "--checkpoints", "8"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/spin32-purity.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "tau,purity,trace,min_eig,nx,ny,nz,td_effective");
    assert_eq!(lines.count(), 9);
    let report = json(&dir.path().join("out/spin32-purity.json"));
    assert_eq!(report["schema_version"], 1);
    let loss = report["result"]["purity_loss_exact"].as_f64().unwrap();
    assert!((loss - 0.16317).abs() < 1e-4, "{loss}");
    let eq21 = report["result"]["purity_loss_eq21"].as_f64().unwrap();
    assert!((eq21 - 4.0 * std::f64::consts::PI.powi(2) / 200.0).abs() < 1e-3);
    assert_eq!(report["flags"]["invariants"], true);
}

#[test]
fn sweep_reports_slope_and_frozen_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = darkspace(dir.path(), &["sweep", "--gammaT", "100,200,400,800", "--gnuplot"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert!(csv.starts_with("gammaT,purity_loss_exact,purity_loss_eq12,purity_loss_eq21,trace_distance_final\n"));
    assert_eq!(csv.lines().count(), 5);
    let report = json(&dir.path().join("out/sweep.json"));
    let slope = report["result"]["fitted_slope"].as_f64().unwrap();
    assert!((-1.0..=-0.8).contains(&slope), "{slope}");
    assert!(dir.path().join("out/sweep.gp").exists());
}

#[test]
fn same_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["effective-vs-full", "--gammaT", "50", "--checkpoints", "5", "--n0", "0.6,0,0.8"];
    for sub in ["a", "b"] {
        let mut a: Vec<&str> = args.to_vec();
        a.extend(["--out-dir", sub]);
        assert_eq!(darkspace(dir.path(), &a).status.code(), Some(0));
    }
    for f in ["effective-vs-full.csv", "effective-vs-full.json"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn invalid_config_exits_1_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.toml"), "").unwrap();
    std::fs::write(dir.path().join("bad.toml"), "experiment = \"sweep\"\ngammaT = [100, 200]\n").unwrap();
    for args in [
        vec!["run", "--config", "empty.toml"],
        vec!["run", "--config", "bad.toml"],
        vec!["run", "--config", "missing.toml"],
        vec!["spin32-purity", "--n0", "1,1,0"],
        vec!["spin32-purity", "--rtol=-1"],
        vec!["spin32-purity", "--bogus"],
    ] {
        let out = darkspace(dir.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn numerical_failure_exits_2_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    // Coarse tolerances break positivity during the exact run.
    let out = darkspace(dir.path(), &["spin32-purity", "--gammaT", "200", "--rtol", "1e-2", "--atol", "1e-3"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = json(&dir.path().join("out/spin32-purity.error.json"));
    assert_eq!(diag["schema_version"], 1);
    assert!(diag["error"].as_str().unwrap().contains("positivity"));
    assert!(!dir.path().join("out/spin32-purity.csv").exists());
}

#[test]
fn output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "experiment = \"spin32-purity\"\ngammaT = 20\ncheckpoints = 2\n[output]\ndir = \"from-config\"\n").unwrap();
    assert_eq!(darkspace(dir.path(), &["run", "--config", "c.toml"]).status.code(), Some(0));
    assert!(dir.path().join("from-config/spin32-purity.csv").exists());
    let env = Command::new(env!("CARGO_BIN_EXE_darkspace"))
        .args(["run", "--config", "c.toml"])
        .current_dir(dir.path())
        .env("DARKSPACE_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(0));
    assert!(dir.path().join("from-env/spin32-purity.csv").exists());
    let flag = Command::new(env!("CARGO_BIN_EXE_darkspace"))
        .args(["run", "--config", "c.toml", "--out-dir", "from-flag"])
        .current_dir(dir.path())
        .env("DARKSPACE_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert_eq!(flag.status.code(), Some(0));
    assert!(dir.path().join("from-flag/spin32-purity.csv").exists());
}

#[test]
fn custom_protocol_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
experiment = "custom"
gammaT = 40
checkpoints = 4

[protocol]
family = "custom"
jump = { op = "spin32_jump" }
generators = [{ op = "spin", two_j = 3, axis = "y" }, { op = "spin", two_j = 3, axis = "z" }]
angles = [{ kind = "linear", start = 0.0, winding = 1 }, { kind = "fourier", start = 0.0, winding = 0, sin = [0.3] }]
derivative = "analytic"

[initial]
bloch = [1.0, 0.0, 0.0]
"#;
    std::fs::write(dir.path().join("custom.toml"), cfg).unwrap();
    let out = darkspace(dir.path(), &["custom", "--config", "custom.toml"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("out/custom.json"));
    assert!(report["result"]["purity_loss_eq21"].is_null());
    assert!(report["result"]["purity_loss_exact"].as_f64().unwrap() > 0.0);
    assert_eq!(darkspace(dir.path(), &["custom"]).status.code(), Some(1));
}

#[test]
fn gauge_check_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let out = darkspace(dir.path(), &["gauge-check", "--gammaT", "100,200", "--seed", "11", "--checkpoints", "16"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("out/gauge-check.json"));
    assert_eq!(report["flags"]["purity_within_bound"], true);
    assert_eq!(report["flags"]["spectra_agree"], true);
    assert_eq!(report["result"]["gauge"]["dark"].as_array().unwrap().len(), 4);
}

#[test]
fn check_negative_control_exits_3() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/perturbed_tolerance.toml");
    let dir = tempfile::tempdir().unwrap();
    let out = darkspace(dir.path(), &["check", "--only", "8", "--fixture", fixture.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn check_json_subset() {
    let dir = tempfile::tempdir().unwrap();
    let out = darkspace(dir.path(), &["check", "--json", "--only", "4,5"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["criteria"].as_array().unwrap().len(), 2);
    assert_eq!(v["pass"], true);
    assert_eq!(darkspace(dir.path(), &["check", "--only", "12"]).status.code(), Some(1));
}
