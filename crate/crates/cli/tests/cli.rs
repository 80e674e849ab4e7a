use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

/// Exactly orthogonal design with y = 5·x1; OLS gives exact zeros for x2, x3.
const NOISELESS: &str = "x1,x2,x3,y\n1,0,1,5\n-1,0,1,-5\n1,0,-1,5\n-1,0,-1,-5\n0,1,0,0\n0,-1,0,0\n0,1,0,0\n0,-1,0,0\n";

fn aris(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aris"))
        .args(args)
        .env_remove("ARIS_JOBS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn simulated(dir: &Path, model: &str, n: &str) -> String {
    let path = dir.join(format!("sim-{model}-{n}.csv"));
    let p = path.to_str().unwrap();
    let out = aris(&["simulate", "--model", model, "--n", n, "--sigma", "3", "--seed", "11", "--out", p]);
    assert!(out.status.success());
    p.to_string()
}

#[test]
fn noiseless_fit_keeps_only_the_signal() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "nl.csv", NOISELESS);
    let v = json(&aris(&["fit", &csv, "--eta", "0"]));
    assert_eq!(v["active"], serde_json::json!(["x1"]));
    assert!((v["coefficients"][0].as_f64().unwrap() - 5.0).abs() < 1e-9);
    assert_eq!(v["coefficients"][1].as_f64().unwrap(), 0.0);
    assert_eq!(v["coefficients"][2].as_f64().unwrap(), 0.0);
}

#[test]
fn boundary_eta_prints_the_ols_fit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated(dir.path(), "1", "40");
    let mut boundary = json(&aris(&["fit", &csv, "--eta", "-0.5"]));
    let mut ols = json(&aris(&["fit", &csv, "--eta", "ols"]));
    for v in [&mut boundary, &mut ols] {
        let obj = v.as_object_mut().unwrap();
        obj.remove("method");
        obj.remove("eta");
    }
    let (b, o) = (boundary["coefficients"].as_array().unwrap(), ols["coefficients"].as_array().unwrap());
    for (x, y) in b.iter().zip(o) {
        assert!((x.as_f64().unwrap() - y.as_f64().unwrap()).abs() < 1e-10);
    }
    assert_eq!(boundary["active"], ols["active"]);
    assert!((boundary["sigma2"].as_f64().unwrap() - ols["sigma2"].as_f64().unwrap()).abs() < 1e-10);
}

#[test]
fn fit_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated(dir.path(), "3", "30");
    for args in [vec!["fit", &csv, "--eta", "eb"], vec!["fit", &csv, "--eta", "eb", "--evidence", "mc", "--draws", "200", "--seed", "5"]] {
        let a = aris(&args);
        let b = aris(&args);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout);
        let v = json(&a);
        assert!(v["evidence"].as_array().unwrap().len() >= 2);
    }
}

#[test]
fn simulate_is_reproducible_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let a = aris(&["simulate", "--model", "0", "--n", "25", "--sigma", "3", "--seed", "4"]);
    let b = aris(&["simulate", "--model", "0", "--n", "25", "--sigma", "3", "--seed", "4"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,x3,x4,y"));
    assert!(lines.all(|l| l.split(',').count() == 5));
    assert_eq!(text.lines().count(), 26);

    let csv = write(dir.path(), "m0.csv", &text);
    let test = dir.path().join("m0-test.csv");
    let t = aris(&[
        "simulate", "--model", "0", "--n", "25", "--sigma", "3", "--seed", "4", "--out", &csv, "--test-out",
        test.to_str().unwrap(), "--test-size", "50",
    ]);
    assert!(t.status.success());
    assert_eq!(fs::read_to_string(&csv).unwrap(), text);
    assert_eq!(fs::read_to_string(&test).unwrap().lines().count(), 51);
    let v = json(&aris(&["fit", &csv]));
    assert_eq!(v["columns"].as_array().unwrap().len(), 4);
}

#[test]
fn experiment_writes_reports_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.txt",
        "model_id = 1\nn = 30\nsigma = 3\nreplications = 5\ntest_size = 300\nn_boot = 40\nmaster_seed = 2\n",
    );
    let mut reports = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("out{jobs}"));
        let o = aris(&["experiment", &cfg, "--out", out.to_str().unwrap(), "--jobs", jobs, "--quiet"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["report.csv", "replications.csv", "report.txt"] {
            assert!(out.join(f).exists(), "{f}");
        }
        reports.push(fs::read(out.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let header = String::from_utf8(reports[0].clone()).unwrap();
    assert!(header.starts_with("estimator,median_mse,boot_se,mean_c,mean_i,cm\n"));
}

#[test]
fn jobs_default_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.txt", "model_id = 0\nn = 30\nsigma = 3\nreplications = 2\ntest_size = 100\n");
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_aris"))
        .args(["experiment", &cfg, "--out", out.to_str().unwrap(), "--quiet"])
        .env("ARIS_JOBS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_aris"))
        .args(["experiment", &cfg, "--out", out.to_str().unwrap(), "--quiet"])
        .env("ARIS_JOBS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_csv = write(dir.path(), "bad.csv", "a,y\n1,x\n");
    assert_eq!(aris(&["fit", &bad_csv]).status.code(), Some(2));
    assert_eq!(aris(&["fit", &bad_csv, "--eta", "fast"]).status.code(), Some(2));

    let collinear = write(dir.path(), "col.csv", "a,b,y\n1,2,3\n2,4,6\n3,6,1\n4,8,2\n");
    assert_eq!(aris(&["fit", &collinear, "--eta", "ols"]).status.code(), Some(3));

    let bad_cfg = write(dir.path(), "bad.txt", "model_id = 1\nsigma = 3\n");
    assert_eq!(aris(&["experiment", &bad_cfg, "--quiet"]).status.code(), Some(2));

    let failing = write(dir.path(), "fail.txt", "model_id = 1\nn = 4\nsigma = 3\nreplications = 2\nestimators = ols\n");
    let out = dir.path().join("fail-out");
    let out = out.to_str().unwrap();
    assert_eq!(aris(&["experiment", &failing, "--out", out, "--quiet"]).status.code(), Some(4));
    assert_eq!(aris(&["experiment", &failing, "--out", out, "--quiet", "--allow-failures"]).status.code(), Some(0));

    let file = write(dir.path(), "plain", "");
    let nested = format!("{file}/sub");
    assert_eq!(
        aris(&["experiment", &failing, "--out", &nested, "--quiet", "--allow-failures"]).status.code(),
        Some(3)
    );
}
