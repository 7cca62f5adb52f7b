//! Hold-out log-likelihood, squared error against a known truth, and the
//! time-rescaling goodness-of-fit check.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hawkes::{log_likelihood, Compensator, EventSequence, RateFn, Rates};
use crate::quadrature::GaussLegendre;
use crate::report::uniform_grid;

/// Gauss–Legendre order used for integrals without a closed form.
pub const EVAL_RULE_ORDER: usize = 32;

/// Exact log-likelihood of a hold-out sequence, history empty at its origin.
pub fn test_ll(rates: &Rates, holdout: &EventSequence, rule: &GaussLegendre) -> Result<f64> {
    log_likelihood(holdout, rates, rule, Compensator::Truncated)
}

/// Mean squared difference of two equally long value vectors.
pub fn est_err(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(crate::error::invalid(format!(
            "estimate has {} values but truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::EmptySample);
    }
    let sum: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / estimate.len() as f64)
}

/// [`est_err`] of two functions on `points` uniform points over `[0, domain]`.
pub fn est_err_fn(estimate: &dyn RateFn, truth: &dyn RateFn, domain: f64, points: usize) -> Result<f64> {
    let grid = uniform_grid(domain, points);
    let a: Vec<f64> = grid.iter().map(|&x| estimate.eval(x)).collect();
    let b: Vec<f64> = grid.iter().map(|&x| truth.eval(x)).collect();
    est_err(&a, &b)
}

/// Baseline error over the window and trigger error over the true support.
pub fn est_err_rates(estimate: &Rates, truth: &Rates, window: f64, points: usize) -> Result<(f64, f64)> {
    Ok((
        est_err_fn(estimate.mu.as_ref(), truth.mu.as_ref(), window, points)?,
        est_err_fn(estimate.phi.as_ref(), truth.phi.as_ref(), truth.support, points)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RescaledSample {
    /// `1 - exp(-τᵢ)`, one per event after the first of each sequence.
    pub z: Vec<f64>,
    /// Increments that came out negative and were set to zero.
    pub clamped: usize,
}

impl RescaledSample {
    pub fn extend(&mut self, other: RescaledSample) {
        self.z.extend(other.z);
        self.clamped += other.clamped;
    }
}

/// Compensator increments `τᵢ = Λ(tᵢ) - Λ(tᵢ₋₁)` between consecutive events,
/// mapped to `zᵢ = 1 - exp(-τᵢ)`.
pub fn rescale(rates: &Rates, seq: &EventSequence, rule: &GaussLegendre) -> RescaledSample {
    let ts = seq.times();
    let mut out = RescaledSample { z: Vec::with_capacity(ts.len().saturating_sub(1)), clamped: 0 };
    for i in 1..ts.len() {
        let (prev, now) = (ts[i - 1], ts[i]);
        let mut tau = rates.mu_integral(prev, now, rule);
        for &s in ts[..i].iter().rev() {
            let lag_prev = prev - s;
            if lag_prev >= rates.support {
                break;
            }
            tau += rates.phi_integral(lag_prev, now - s, rule);
        }
        if !(tau >= 0.0) {
            out.clamped += 1;
            tau = 0.0;
        }
        out.z.push(-(-tau).exp_m1());
    }
    out
}

/// Kolmogorov distribution tail `P(K > λ)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let sum = y + y.powi(9) + y.powi(25) + y.powi(49);
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
    } else {
        let x = (-2.0 * lambda * lambda).exp();
        2.0 * (x - x.powi(4) + x.powi(9))
    }
    .clamp(0.0, 1.0)
}

/// One-sample KS distance to Uniform(0, 1) and its asymptotic p-value.
pub fn ks_statistic(z: &[f64]) -> Result<(f64, f64)> {
    if z.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max);
    let en = n.sqrt();
    Ok((d, kolmogorov_tail((en + 0.12 + 0.11 / en) * d)))
}

/// 1%-level critical distance of the one-sample KS test, asymptotic form.
pub fn ks_critical_01(n: usize) -> f64 {
    let en = (n as f64).sqrt();
    1.627_624_1 / (en + 0.12 + 0.11 / en)
}

/// `(theoretical, empirical)` quantile pairs against Uniform(0, 1).
pub fn qq_pairs(z: &[f64]) -> Vec<(f64, f64)> {
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.into_iter().enumerate().map(|(i, v)| ((i as f64 + 0.5) / n, v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_ll_mean: f64,
    pub test_ll_sum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_err_mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_err_phi: Option<f64>,
    pub ks_distance: Option<f64>,
    pub ks_p: Option<f64>,
    pub n_sequences: usize,
    pub n_events: usize,
    pub n_rescaled: usize,
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub qq: Vec<(f64, f64)>,
}

/// All metrics for one fitted model on a hold-out set; `truth` adds the
/// squared-error terms.
pub fn evaluate(rates: &Rates, holdout: &Dataset, truth: Option<&Rates>, points: usize) -> Result<Evaluation> {
    let rule = GaussLegendre::new(EVAL_RULE_ORDER)?;
    let mut lls = Vec::with_capacity(holdout.sequences().len());
    let mut sample = RescaledSample::default();
    for seq in holdout.sequences() {
        lls.push(test_ll(rates, seq, &rule)?);
        sample.extend(rescale(rates, seq, &rule));
    }
    let test_ll_sum: f64 = lls.iter().sum();
    let test_ll_mean = if lls.is_empty() { 0.0 } else { test_ll_sum / lls.len() as f64 };
    let (est_err_mu, est_err_phi) = match truth {
        Some(t) => {
            let (m, p) = est_err_rates(rates, t, holdout.window(), points)?;
            (Some(m), Some(p))
        }
        None => (None, None),
    };
    let ks = match ks_statistic(&sample.z) {
        Ok(v) => Some(v),
        Err(Error::EmptySample) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluation {
        report: EvalReport {
            test_ll_mean,
            test_ll_sum,
            est_err_mu,
            est_err_phi,
            ks_distance: ks.map(|k| k.0),
            ks_p: ks.map(|k| k.1),
            n_sequences: lls.len(),
            n_events: holdout.total_events(),
            n_rescaled: sample.z.len(),
            clamped: sample.clamped,
        },
        qq: qq_pairs(&sample.z),
    })
}
