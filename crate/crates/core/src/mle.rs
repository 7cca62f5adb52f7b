//! Parametric comparison model: constant baseline, exponential trigger
//! `φ(τ) = α e^{-βτ}`, fitted by maximum likelihood.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::FitConfig;
use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::hawkes::{EventSequence, Rates};
use crate::optim::{bfgs_box, BfgsOptions};
use crate::rates::{Constant, ExpDecay};
use crate::report::{uniform_grid, FitReport, GridEstimates};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpHawkesParams {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ExpHawkesParams {
    pub fn new(mu: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { mu, alpha, beta };
        if !p.is_valid() {
            return Err(invalid(format!("exponential Hawkes parameters must be positive and finite, got {p:?}")));
        }
        Ok(p)
    }

    pub fn is_valid(&self) -> bool {
        [self.mu, self.alpha, self.beta].iter().all(|v| *v > 0.0 && v.is_finite())
    }

    /// Branching ratio `α/β`; below one for a stationary process.
    pub fn branching_ratio(&self) -> f64 {
        self.alpha / self.beta
    }

    fn to_log(self) -> [f64; 3] {
        [self.mu.ln(), self.alpha.ln(), self.beta.ln()]
    }

    fn from_log(x: &[f64]) -> Self {
        Self { mu: x[0].exp(), alpha: x[1].exp(), beta: x[2].exp() }
    }
}

/// Negative log-likelihood and its gradient with respect to `(μ, α, β)`.
///
/// Uses `R_i = Σ_{j<i} e^{-β(t_i - t_j)}` and `D_i = Σ_{j<i} (t_i - t_j) e^{-β(t_i - t_j)}`,
/// both updated in one pass.
pub fn exp_hawkes_nll_grad(p: &ExpHawkesParams, seq: &EventSequence) -> (f64, [f64; 3]) {
    let ExpHawkesParams { mu, alpha, beta } = *p;
    let window = seq.window();
    let mut nll = mu * window;
    let mut grad = [window, 0.0, 0.0];
    let (mut r, mut d) = (0.0f64, 0.0f64);
    let mut prev: Option<f64> = None;
    for &t in seq.times() {
        if let Some(s) = prev {
            let gap = t - s;
            let decay = (-beta * gap).exp();
            d = decay * (d + gap * (1.0 + r));
            r = decay * (1.0 + r);
        }
        prev = Some(t);
        let lambda = mu + alpha * r;
        nll -= lambda.ln();
        grad[0] -= 1.0 / lambda;
        grad[1] -= r / lambda;
        grad[2] += alpha * d / lambda;

        let reach = window - t;
        let tail = (-beta * reach).exp();
        let mass = -(-beta * reach).exp_m1();
        nll += alpha / beta * mass;
        grad[1] += mass / beta;
        grad[2] += -alpha / (beta * beta) * mass + alpha / beta * reach * tail;
    }
    (nll, grad)
}

pub fn exp_hawkes_nll(p: &ExpHawkesParams, seq: &EventSequence) -> f64 {
    exp_hawkes_nll_grad(p, seq).0
}

/// Summed over the sequences of a dataset.
pub fn dataset_nll_grad(p: &ExpHawkesParams, data: &Dataset) -> (f64, [f64; 3]) {
    let mut total = 0.0;
    let mut grad = [0.0; 3];
    for seq in data.sequences() {
        let (f, g) = exp_hawkes_nll_grad(p, seq);
        total += f;
        for k in 0..3 {
            grad[k] += g[k];
        }
    }
    (total, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    /// Box on each parameter, applied in log space.
    pub bounds: (f64, f64),
    pub max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { bounds: (1e-10, 1e6), max_iter: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleFit {
    pub params: ExpHawkesParams,
    pub nll: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// One local search from `init`. Points with `α ≥ β` are treated as infeasible.
pub fn fit_mle_from(data: &Dataset, init: ExpHawkesParams, opts: &MleOptions) -> Result<MleFit> {
    if !init.is_valid() || init.branching_ratio() >= 1.0 {
        return Err(invalid(format!("infeasible starting point {init:?}")));
    }
    let (lo, hi) = (opts.bounds.0.ln(), opts.bounds.1.ln());
    let scale = data.total_events().max(1) as f64;
    let bfgs = BfgsOptions { max_iter: opts.max_iter, grad_tol: 1e-7 * scale, f_tol: 1e-13 };
    let fg = |x: &[f64]| {
        let p = ExpHawkesParams::from_log(x);
        if p.branching_ratio() >= 1.0 {
            return None;
        }
        let (f, g) = dataset_nll_grad(&p, data);
        f.is_finite().then(|| (f, vec![g[0] * p.mu, g[1] * p.alpha, g[2] * p.beta]))
    };
    let x0 = init.to_log();
    let res = bfgs_box(fg, &x0, &[lo; 3], &[hi; 3], &bfgs);
    let init_nll = dataset_nll_grad(&init, data).0;
    let (params, nll) = if res.value <= init_nll {
        (ExpHawkesParams::from_log(&res.x), res.value)
    } else {
        (init, init_nll)
    };
    Ok(MleFit { params, nll, converged: res.converged, evaluations: res.evaluations })
}

/// Deterministic starting points spread over branching ratio and decay rate.
pub fn starting_points(data: &Dataset, count: usize) -> Vec<ExpHawkesParams> {
    let exposure = data.sequences().len().max(1) as f64 * data.window();
    let rate = (data.total_events() as f64 / exposure).max(1.0 / exposure);
    const PATTERNS: [(f64, f64); 3] = [(0.5, 1.0), (0.2, 0.25), (0.8, 4.0)];
    (0..count)
        .map(|k| {
            let (n, b) = PATTERNS[k % 3];
            let widen = 2f64.powi((k / 3) as i32);
            let beta = b * rate * if k % 2 == 0 { widen } else { 1.0 / widen };
            ExpHawkesParams { mu: rate * (1.0 - n), alpha: n * beta, beta }
        })
        .collect()
}

/// Best of several local searches.
pub fn fit_mle(data: &Dataset, starts: usize, opts: &MleOptions) -> Result<MleFit> {
    let mut best: Option<MleFit> = None;
    for init in starting_points(data, starts.max(1)) {
        let fit = fit_mle_from(data, init, opts)?;
        if best.as_ref().is_none_or(|b| fit.nll < b.nll) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleModel {
    pub params: ExpHawkesParams,
    pub window: f64,
    /// Trigger support of the data the model was fitted on; only used to
    /// place the reporting grid, the kernel itself is unrestricted.
    pub support: f64,
}

impl MleModel {
    /// The kernel has unbounded support; no lag inside a window exceeds the
    /// window itself, so that is used as the cut-off.
    pub fn rates(&self) -> Result<Rates> {
        let p = self.params;
        Rates::new(
            Arc::new(Constant(p.mu)),
            Arc::new(ExpDecay { alpha: p.alpha, beta: p.beta }),
            self.window,
        )
    }

    pub fn estimates(&self, points: usize) -> GridEstimates {
        let p = self.params;
        let t = uniform_grid(self.window, points);
        let tau = uniform_grid(self.support, points);
        GridEstimates {
            mu: vec![p.mu; t.len()],
            phi: tau.iter().map(|x| p.alpha * (-p.beta * x).exp()).collect(),
            t,
            tau,
            mu_sd: None,
            phi_sd: None,
        }
    }
}

pub fn fit_mle_model(data: &Dataset, config: &FitConfig) -> Result<(MleModel, FitReport)> {
    config.validate()?;
    let started = std::time::Instant::now();
    let fit = fit_mle(data, config.mle_starts, &MleOptions::default())?;
    let model = MleModel { params: fit.params, window: data.window(), support: data.support() };
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push("optimizer did not converge; returning the best iterate".to_string());
    }
    let report = FitReport {
        method: "mle".into(),
        iterations: fit.evaluations,
        converged: fit.converged,
        objective: vec![-fit.nll],
        hyperparams: Vec::new(),
        warnings,
        estimates: model.estimates(config.eval_points),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Every pairwise term summed explicitly.
    fn direct_nll(p: &ExpHawkesParams, seq: &EventSequence) -> f64 {
        let ts = seq.times();
        let mut nll = p.mu * seq.window();
        for (i, &t) in ts.iter().enumerate() {
            let lambda = p.mu + ts[..i].iter().map(|s| p.alpha * (-p.beta * (t - s)).exp()).sum::<f64>();
            nll -= lambda.ln();
            nll += p.alpha / p.beta * (1.0 - (-p.beta * (seq.window() - t)).exp());
        }
        nll
    }

    #[test]
    fn poisson_limit() {
        let seq = EventSequence::new(vec![0.5, 1.5, 4.0], 10.0).unwrap();
        let p = ExpHawkesParams { mu: 0.7, alpha: 0.0, beta: 1.0 };
        let expected = -3.0 * 0.7f64.ln() + 7.0;
        assert!((exp_hawkes_nll(&p, &seq) - expected).abs() < 1e-13);
    }

    #[test]
    fn two_events_match_direct_sum() {
        let seq = EventSequence::new(vec![1.0, 2.5], 4.0).unwrap();
        let p = ExpHawkesParams { mu: 0.8, alpha: 0.5, beta: 1.3 };
        let by_hand = 0.8 * 4.0 - 0.8f64.ln() - (0.8 + 0.5 * (-1.3f64 * 1.5).exp()).ln()
            + 0.5 / 1.3 * ((1.0 - (-1.3f64 * 3.0).exp()) + (1.0 - (-1.3f64 * 1.5).exp()));
        assert!((exp_hawkes_nll(&p, &seq) - by_hand).abs() < 1e-13);
        assert!((direct_nll(&p, &seq) - by_hand).abs() < 1e-13);
    }

    #[test]
    fn empty_sequence() {
        let seq = EventSequence::empty(5.0).unwrap();
        let p = ExpHawkesParams { mu: 2.0, alpha: 0.3, beta: 1.0 };
        assert_eq!(exp_hawkes_nll(&p, &seq), 10.0);
    }

    #[test]
    fn starts_are_feasible() {
        let seq = EventSequence::new(vec![1.0, 2.0, 3.0], 10.0).unwrap();
        let data = Dataset::single(seq, 2.0).unwrap();
        for p in starting_points(&data, 7) {
            assert!(p.is_valid() && p.branching_ratio() < 1.0, "{p:?}");
        }
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let data = Dataset::single(EventSequence::new(vec![1.0], 3.0).unwrap(), 1.0).unwrap();
        let p = ExpHawkesParams { mu: 1.0, alpha: 2.0, beta: 1.0 };
        assert!(fit_mle_from(&data, p, &MleOptions::default()).is_err());
    }
}
