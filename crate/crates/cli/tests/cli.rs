use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sgp-hawkes"));
    cmd.env_remove("HAWKES_SGP_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

fn simulate_small(root: &Path, name: &str, seed: &str) -> PathBuf {
    let cfg = write_config(root, "small.json", r#"{"preset": "case1", "n_train": 10, "n_test": 3}"#);
    let out = root.join(name);
    let res = run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

#[test]
fn simulate_writes_one_file_per_replicate() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("data");
    let res = run(&["simulate", "--preset", "case1", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let names = files(&out);
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 110);
    assert!(names.contains(&"manifest.json".to_string()));
    assert!(names.contains(&"run_config.json".to_string()));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["T"], 100.0);
    assert_eq!(manifest["T_phi"], 6.0);
    assert_eq!(manifest["train"].as_array().unwrap().len(), 100);
    assert_eq!(manifest["test"].as_array().unwrap().len(), 10);
}

#[test]
fn simulate_with_no_replicates_writes_the_manifest_only() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"preset": "case2", "n_train": 0, "n_test": 0}"#);
    let out = tmp.path().join("data");
    let res = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    assert_eq!(files(&out), vec!["manifest.json", "run_config.json"]);
}

#[test]
fn simulate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = simulate_small(tmp.path(), "a", "11");
    let b = simulate_small(tmp.path(), "b", "11");
    let c = simulate_small(tmp.path(), "c", "12");
    assert_eq!(files(&a), files(&b));
    for name in files(&a) {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
    assert_ne!(fs::read(a.join("train_000.csv")).unwrap(), fs::read(c.join("train_000.csv")).unwrap());
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let res = run(&["simulate", "--preset", "case9", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("case9"));
    assert_eq!(code(&run(&["simulate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn em_fit_reports_a_monotone_trace() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let res = run(&["simulate", "--preset", "case1", "--seed", "7", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let out = tmp.path().join("em");
    let res = run(&["fit", "--data", data.to_str().unwrap(), "--method", "em", "--out", out.to_str().unwrap()]);
    assert!([0, 2].contains(&code(&res)), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["model.json", "report.json", "estimates_mu.csv", "estimates_phi.csv", "timing.json", "run_config.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let report = read_json(&out.join("report.json"));
    let trace: Vec<f64> = report["objective"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(trace.len() >= 2);
    for w in trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-3 * w[0].abs(), "{} then {}", w[0], w[1]);
    }
    assert_eq!(report["converged"].as_bool().unwrap(), code(&res) == 0);
    let mu = fs::read_to_string(out.join("estimates_mu.csv")).unwrap();
    assert!(mu.starts_with("t,mu\n"));
    assert_eq!(mu.lines().count(), 201);
    let model = read_json(&out.join("model.json"));
    assert_eq!(model["method"], "em");
    assert_eq!(model["mu"]["u"].as_array().unwrap().len(), 10);
}

#[test]
fn mle_fit_writes_three_parameters_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_small(tmp.path(), "data", "3");
    let fit = |name: &str| {
        let out = tmp.path().join(name);
        let res = run(&["fit", "--data", data.to_str().unwrap(), "--method", "mle", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        out
    };
    let (a, b) = (fit("a"), fit("b"));
    let model = read_json(&a.join("model.json"));
    let params: Vec<&str> = ["mu", "alpha", "beta"].into_iter().filter(|k| model[*k].is_f64()).collect();
    assert_eq!(params.len(), 3);
    assert_eq!(model["method"], "mle");
    for name in ["model.json", "report.json", "estimates_mu.csv", "estimates_phi.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn vi_fit_writes_bands() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_small(tmp.path(), "data", "5");
    let cfg = write_config(tmp.path(), "vi.json", r#"{"fit": {"max_iter": 15, "eval_points": 50}}"#);
    let out = tmp.path().join("vi");
    let res = run(&[
        "fit", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(), "--method", "vi", "--out",
        out.to_str().unwrap(),
    ]);
    assert!([0, 2].contains(&code(&res)));
    let phi = fs::read_to_string(out.join("estimates_phi.csv")).unwrap();
    assert!(phi.starts_with("tau,phi,phi_sd\n"));
    assert_eq!(phi.lines().count(), 51);
}

#[test]
fn non_convergence_exits_two_with_artifacts() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_small(tmp.path(), "data", "5");
    let cfg = write_config(tmp.path(), "short.json", r#"{"fit": {"max_iter": 2, "tol": 1e-12}}"#);
    let out = tmp.path().join("em");
    let res = run(&["fit", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 2);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["converged"], false);
    assert!(!report["warnings"].as_array().unwrap().is_empty());
    assert!(out.join("model.json").exists());
}

#[test]
fn missing_manifest_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("nowhere");
    let res = run(&["fit", "--data", data.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains(data.join("manifest.json").to_str().unwrap()), "{err}");
}

#[test]
fn eval_on_an_empty_holdout() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    fs::write(data.join("manifest.json"), r#"{"T": 10, "T_phi": 6, "train": [], "test": ["test_000.csv"]}"#).unwrap();
    fs::write(data.join("test_000.csv"), "t\n").unwrap();
    let model = write_config(
        tmp.path(),
        "model.json",
        r#"{"method": "mle", "mu": 0.5, "alpha": 0.1, "beta": 1.0, "window": 10, "support": 6}"#,
    );
    let out = tmp.path().join("eval");
    let res = run(&[
        "eval", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out.join("eval_report.json"));
    assert_eq!(report["test_ll_mean"], -5.0);
    assert_eq!(report["n_events"], 0);
    assert!(report["ks_distance"].is_null());
    assert!(report.get("est_err_mu").is_none());
    assert_eq!(fs::read_to_string(out.join("qq.csv")).unwrap(), "theoretical,empirical\n");
}

#[test]
fn eval_with_a_known_preset_reports_estimation_error() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_small(tmp.path(), "data", "9");
    let fit_out = tmp.path().join("mle");
    let res = run(&["fit", "--data", data.to_str().unwrap(), "--method", "mle", "--out", fit_out.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let out = tmp.path().join("eval");
    let model = fit_out.join("model.json");
    let res = run(&[
        "eval", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out.join("eval_report.json"));
    assert!(report["est_err_mu"].as_f64().unwrap() >= 0.0);
    assert!(report["est_err_phi"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["n_sequences"], 3);
    let qq = fs::read_to_string(out.join("qq.csv")).unwrap();
    assert_eq!(qq.lines().count() - 1, report["n_rescaled"].as_u64().unwrap() as usize);
    assert!(out.join("run_config.json").exists());

    // A model fitted on another window does not describe this dataset.
    let mut other = read_json(&model);
    other["window"] = Value::from(50.0);
    let bad = write_config(tmp.path(), "bad.json", &other.to_string());
    let res = run(&["eval", "--data", data.to_str().unwrap(), "--model", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 1);
}

#[test]
fn bench_writes_one_row_per_size() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "b.json", r#"{"iterations": 3}"#);
    let cfg = cfg.to_str().unwrap();
    let one = tmp.path().join("one");
    assert_eq!(code(&run(&["bench", "--config", cfg, "--sizes", "500", "--out", one.to_str().unwrap()])), 0);
    let text = fs::read_to_string(one.join("bench.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("N,seconds\n500,"));

    let three = tmp.path().join("three");
    let res = run(&["bench", "--config", cfg, "--sizes", "500,1000,2000", "--method", "vi", "--out", three.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let text = fs::read_to_string(three.join("bench.csv")).unwrap();
    let sizes: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(sizes, vec!["500", "1000", "2000"]);
}

#[test]
fn thread_cap_must_be_positive() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("d");
    let res = bin()
        .args(["simulate", "--preset", "case1", "--out", out.to_str().unwrap()])
        .env("HAWKES_SGP_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&res), 1);
    let res = bin()
        .args(["simulate", "--preset", "case2", "--out", out.to_str().unwrap()])
        .env("HAWKES_SGP_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
}
