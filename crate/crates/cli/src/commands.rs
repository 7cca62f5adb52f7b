use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use sgp_hawkes::bench::{median_time, sized_sequence};
use sgp_hawkes::dataset::{
    load_split, read_manifest, sequence_file_name, write_manifest, write_sequence_csv, Dataset, Manifest, Split,
};
use sgp_hawkes::eval::evaluate;
use sgp_hawkes::registry::EstimatorRegistry;
use sgp_hawkes::report::GridEstimates;
use sgp_hawkes::scenario::simulate_split;

use crate::run_config::RunConfig;

pub const CONFIG_ECHO: &str = "run_config.json";

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    NotConverged,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn echo_config(out: &Path, command: &str, config: &RunConfig) -> Result<()> {
    write_json(&out.join(CONFIG_ECHO), &json!({ "command": command, "config": config }))
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    value.as_ref().ok_or_else(|| anyhow!("`{key}` is required (config key or --{key})"))
}

pub fn simulate(config: &RunConfig, out: &Path) -> Result<Status> {
    let scenario = config.scenario(None)?.ok_or_else(|| anyhow!("`preset` or `custom` is required"))?;
    let (train, test) = simulate_split(scenario.as_ref(), config.n_train, config.n_test, config.seed)?;
    create_out(out)?;
    let mut manifest = Manifest {
        window: scenario.window(),
        support: scenario.support(),
        preset: config.preset.clone(),
        seed: Some(config.seed),
        train: Vec::new(),
        test: Vec::new(),
    };
    for (split, data) in [(Split::Train, &train), (Split::Test, &test)] {
        for (i, seq) in data.sequences().iter().enumerate() {
            let name = sequence_file_name(split, i);
            write_sequence_csv(&out.join(&name), seq)?;
            match split {
                Split::Train => manifest.train.push(name),
                Split::Test => manifest.test.push(name),
            }
        }
    }
    write_manifest(out, &manifest)?;
    echo_config(out, "simulate", config)?;
    println!(
        "simulated {} training and {} hold-out sequences ({} events) into {}",
        config.n_train,
        config.n_test,
        train.total_events() + test.total_events(),
        out.display()
    );
    Ok(Status::Done)
}

/// One CSV per function: location, estimate and, when available, its
/// standard deviation.
fn write_estimates(out: &Path, est: &GridEstimates) -> Result<()> {
    let write = |name: &str, cols: [&str; 3], x: &[f64], y: &[f64], sd: Option<&Vec<f64>>| -> Result<()> {
        let path = out.join(name);
        let mut w = BufWriter::new(fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?);
        match sd {
            Some(_) => writeln!(w, "{},{},{}", cols[0], cols[1], cols[2])?,
            None => writeln!(w, "{},{}", cols[0], cols[1])?,
        }
        for i in 0..x.len() {
            match sd {
                Some(s) => writeln!(w, "{},{},{}", x[i], y[i], s[i])?,
                None => writeln!(w, "{},{}", x[i], y[i])?,
            }
        }
        w.flush()?;
        Ok(())
    };
    write("estimates_mu.csv", ["t", "mu", "mu_sd"], &est.t, &est.mu, est.mu_sd.as_ref())?;
    write("estimates_phi.csv", ["tau", "phi", "phi_sd"], &est.tau, &est.phi, est.phi_sd.as_ref())
}

pub fn fit(config: &RunConfig, out: &Path) -> Result<Status> {
    let data_dir = require(&config.data, "data")?;
    let method = config.method.as_deref().unwrap_or("em");
    let estimator = EstimatorRegistry::with_builtin().get(method)?;
    config.fit.validate()?;
    let (_, train) = load_split(data_dir, Split::Train)?;
    if train.sequences().is_empty() {
        bail!("{} lists no training sequences", data_dir.join(sgp_hawkes::dataset::MANIFEST_FILE).display());
    }
    let outcome = estimator.fit(&train, &config.fit)?;
    create_out(out)?;
    let mut report = outcome.report;
    if !report.converged {
        report.warnings.push(format!("stopped after {} iterations without converging", report.iterations));
    }
    write_json(&out.join("model.json"), &outcome.model.to_json()?)?;
    write_json(&out.join("report.json"), &report)?;
    write_estimates(out, &report.estimates)?;
    write_json(
        &out.join("timing.json"),
        &json!({ "method": method, "seconds": report.elapsed_seconds, "iterations": report.iterations }),
    )?;
    echo_config(out, "fit", config)?;
    println!(
        "{method}: {} iterations in {:.2}s, converged: {}",
        report.iterations, report.elapsed_seconds, report.converged
    );
    Ok(if report.converged { Status::Done } else { Status::NotConverged })
}

pub fn eval(config: &RunConfig, out: &Path) -> Result<Status> {
    let data_dir = require(&config.data, "data")?;
    let model_path = require(&config.model, "model")?;
    let text = fs::read_to_string(model_path).with_context(|| format!("reading model {}", model_path.display()))?;
    let json: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing model {}", model_path.display()))?;
    let model = EstimatorRegistry::with_builtin().load(&json)?;
    let manifest = read_manifest(data_dir)?;
    if json.get("window").and_then(|v| v.as_f64()) != Some(manifest.window) {
        bail!(
            "model window {:?} does not match dataset window {}",
            json.get("window"),
            manifest.window
        );
    }
    let (_, holdout) = load_split(data_dir, Split::Test)?;
    let truth = config.scenario(manifest.preset.as_deref())?;
    let truth_rates = truth.as_ref().map(|s| s.rates());
    let rates = model.rates()?;
    let evaluation = evaluate(&rates, &holdout, truth_rates.as_ref(), config.fit.eval_points)?;
    create_out(out)?;
    write_json(&out.join("eval_report.json"), &evaluation.report)?;
    let path = out.join("qq.csv");
    let mut w = BufWriter::new(fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?);
    writeln!(w, "theoretical,empirical")?;
    for (a, b) in &evaluation.qq {
        writeln!(w, "{a},{b}")?;
    }
    w.flush()?;
    echo_config(out, "eval", config)?;
    println!("{}", serde_json::to_string(&evaluation.report)?);
    Ok(Status::Done)
}

pub fn bench(config: &RunConfig, out: &Path) -> Result<Status> {
    let method = config.method.as_deref().unwrap_or("em");
    let estimator = EstimatorRegistry::with_builtin().get(method)?;
    let scenario = config.scenario(Some("case1"))?.expect("a default preset is given");
    if config.sizes.is_empty() {
        bail!("`sizes` must list at least one event count");
    }
    create_out(out)?;
    let path = out.join("bench.csv");
    let mut rows = String::from("N,seconds\n");
    for &n in &config.sizes {
        let data: Dataset = sized_sequence(scenario.as_ref(), n, config.seed)?;
        let seconds = median_time(estimator.as_ref(), &data, &config.fit, config.iterations, config.repeats)?;
        println!("{method} N = {n}: {seconds:.4}s");
        rows.push_str(&format!("{n},{seconds}\n"));
    }
    fs::write(&path, rows).with_context(|| format!("writing {}", path.display()))?;
    echo_config(out, "bench", config)?;
    Ok(Status::Done)
}
