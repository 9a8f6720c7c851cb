use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stefan_core::stefan::SimConfig;
use tempfile::TempDir;

fn stefan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stefan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn small(outdir: &Path, extra: &str) -> String {
    format!(
        r#"{{"rstar": 1.2, "dt": 1e-3, "T": 0.01, "K": 8, "M": 32, "Nminus": 16, "Nplus": 16,
            "delta": 1e-3, "eps": 1e-4, "seed": 2, "outdir": "{}"{extra}}}"#,
        outdir.display()
    )
}

#[test]
fn config_round_trips_through_json() {
    let text = r#"{"rstar": 2.0, "eps": 1e-3, "dt": 5e-4, "T": 1.5, "K": 12, "M": 48,
                   "Nminus": 24, "Nplus": 40, "delta": 1e-4, "center_x": 0.01, "seed": 9}"#;
    let a: SimConfig = serde_json::from_str(text).unwrap();
    let b: SimConfig = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.k, a.m, a.n_minus, a.n_plus), (12, 48, 24, 40));
}

#[test]
fn unit_container_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", r#"{"rstar": 1.0}"#);
    let out = stefan(&["eigen", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let missing = stefan(&["eigen", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let cfg = write_config(tmp.path(), &format!("{run}.json"), &small(&dir, ""));
        let out = stefan(&["simulate", &cfg, "--every", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(fs::read(dir.join("trajectory.csv")).unwrap());
        assert!(dir.join("summary.json").exists());
        assert!(dir.join("manifest_simulate.json").exists());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn zero_perturbation_has_zero_drift() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        "zero.json",
        &small(&dir, "").replace("\"delta\": 1e-3", "\"delta\": 0.0"),
    );
    let out = stefan(&["conserved", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let mut rdr = csv::Reader::from_path(dir.join("conserved.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let idx: Vec<usize> = ["m0", "ma", "mb"]
        .iter()
        .map(|h| headers.iter().position(|x| x == *h).unwrap())
        .collect();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        for &i in &idx {
            assert_eq!(rec[i].parse::<f64>().unwrap(), 0.0);
        }
        rows += 1;
    }
    assert!(rows > 1);
}

#[test]
fn eigen_reports_growth_rate_for_large_container() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        "u.json",
        &format!(r#"{{"rstar": 2.0, "outdir": "{}"}}"#, dir.display()),
    );
    let out = stefan(&["eigen", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("eigen.json")).unwrap()).unwrap();
    let lam = v["lambda0_dispersion"].as_f64().unwrap();
    assert!((lam - 3.4264).abs() < 1e-4);
    assert!(dir.join("mode_profile.csv").exists());
}

#[test]
fn quick_verify_passes() {
    let tmp = TempDir::new().unwrap();
    let out = stefan(&["verify", "--quick", "--outdir", &tmp.path().display().to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(tmp.path().join("verify.json").exists());
}
