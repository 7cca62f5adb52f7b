//! What a fit returns besides the model: the monitored objective, the
//! hyperparameter history, and fitted functions on a reporting grid.

use serde::{Deserialize, Serialize};

use crate::hawkes::Rates;
use crate::kernel::KernelHyperparams;

/// `n` equally spaced points on `[0, domain]`, both ends included.
pub fn uniform_grid(domain: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| domain * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRecord {
    pub iteration: usize,
    pub mu: KernelHyperparams,
    pub phi: KernelHyperparams,
    /// The search failed for at least one component and kept its old values.
    pub failed: bool,
}

/// Fitted baseline and trigger on uniform grids, with optional one-standard
/// deviation bands.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridEstimates {
    pub t: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_sd: Option<Vec<f64>>,
    pub tau: Vec<f64>,
    pub phi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_sd: Option<Vec<f64>>,
}

impl GridEstimates {
    pub fn from_rates(rates: &Rates, window: f64, points: usize) -> Self {
        let t = uniform_grid(window, points);
        let tau = uniform_grid(rates.support, points);
        Self {
            mu: t.iter().map(|&x| rates.mu.eval(x)).collect(),
            phi: tau.iter().map(|&x| rates.phi.eval(x)).collect(),
            t,
            tau,
            mu_sd: None,
            phi_sd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialization, then after every iteration.
    pub objective: Vec<f64>,
    pub hyperparams: Vec<HyperRecord>,
    pub warnings: Vec<String>,
    pub estimates: GridEstimates,
    /// Wall time of the fit; kept out of the serialized report so that
    /// reports are reproducible byte for byte.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl FitReport {
    /// Largest relative drop between consecutive objective values
    /// (zero for a non-decreasing trace).
    pub fn worst_relative_decrease(&self) -> f64 {
        self.objective
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}
