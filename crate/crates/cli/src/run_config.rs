//! The JSON run configuration shared by all subcommands. Each command reads
//! only the keys it needs; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sgp_hawkes::config::FitConfig;
use sgp_hawkes::rates::Tabulated;
use sgp_hawkes::scenario::{Scenario, ScenarioRegistry, TabulatedScenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Ground truth given as piecewise-linear tables instead of a preset name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomRates {
    #[serde(rename = "T")]
    pub window: f64,
    #[serde(rename = "T_phi")]
    pub support: f64,
    pub mu: RateTable,
    pub phi: RateTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub custom: Option<CustomRates>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Dataset directory holding a manifest.
    pub data: Option<PathBuf>,
    pub method: Option<String>,
    /// Model file written by `fit`.
    pub model: Option<PathBuf>,
    pub fit: FitConfig,
    /// Event counts timed by `bench`.
    pub sizes: Vec<usize>,
    pub iterations: usize,
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            custom: None,
            n_train: 100,
            n_test: 10,
            seed: 0,
            data: None,
            method: None,
            model: None,
            fit: FitConfig::default(),
            sizes: vec![500, 1000, 2000],
            iterations: 50,
            repeats: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// The preset or the custom tables; `default` is used when neither is given.
    pub fn scenario(&self, default: Option<&str>) -> Result<Option<Arc<dyn Scenario>>> {
        match (&self.preset, &self.custom) {
            (Some(_), Some(_)) => bail!("give either `preset` or `custom`, not both"),
            (None, Some(c)) => Ok(Some(Arc::new(TabulatedScenario {
                name: "custom".into(),
                window: c.window,
                support: c.support,
                mu: Tabulated::new(c.mu.x.clone(), c.mu.y.clone()).context("custom mu table")?,
                phi: Tabulated::new(c.phi.x.clone(), c.phi.y.clone()).context("custom phi table")?,
            }))),
            (preset, None) => match preset.as_deref().or(default) {
                Some(name) => Ok(Some(ScenarioRegistry::with_builtin().get(name)?)),
                None => Ok(None),
            },
        }
    }
}
