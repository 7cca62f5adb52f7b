//! Event sequences, conditional intensity, exact log-likelihood and Ogata
//! thinning for Hawkes processes with arbitrary baseline and trigger functions.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{invalid, Error, Result};
use crate::quadrature::GaussLegendre;

/// Strictly increasing timestamps on the observation window `[0, window]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    times: Vec<f64>,
    window: f64,
}

impl EventSequence {
    pub fn new(times: Vec<f64>, window: f64) -> Result<Self> {
        if !(window > 0.0 && window.is_finite()) {
            return Err(invalid(format!("window must be positive, got {window}")));
        }
        if let Some(bad) = times.iter().find(|t| !(0.0..=window).contains(*t)) {
            return Err(invalid(format!("event time {bad} outside [0, {window}]")));
        }
        if let Some(i) = times.windows(2).position(|w| w[0] >= w[1]) {
            return Err(invalid(format!(
                "event times must be strictly increasing (index {} -> {})",
                i,
                i + 1
            )));
        }
        Ok(Self { times, window })
    }

    pub fn empty(window: f64) -> Result<Self> {
        Self::new(Vec::new(), window)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Same events with every timestamp (and the window) shifted by `offset`.
    pub fn shifted(&self, offset: f64) -> Result<Self> {
        Self::new(self.times.iter().map(|t| t + offset).collect(), self.window + offset)
    }
}

/// A non-negative rate function on `[0, ∞)`.
pub trait RateFn: Send + Sync + fmt::Debug {
    fn eval(&self, x: f64) -> f64;

    /// An upper bound of the function over `[x, ∞)`; must be non-increasing in `x`.
    fn sup_from(&self, x: f64) -> f64;

    /// `∫₀ˣ` in closed form, when one is available.
    fn cumulative(&self, _x: f64) -> Option<f64> {
        None
    }
}

/// Baseline `μ(t)` and trigger `φ(τ)` with trigger support `[0, support]`.
#[derive(Debug, Clone)]
pub struct Rates {
    pub mu: Arc<dyn RateFn>,
    pub phi: Arc<dyn RateFn>,
    pub support: f64,
}

/// How the trigger part of the compensator is accounted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Compensator {
    /// Each event contributes `∫₀^{min(T_φ, T - tᵢ)} φ`: the exact likelihood.
    #[default]
    Truncated,
    /// Each event contributes the full `∫₀^{T_φ} φ`, the convention of the
    /// augmented branching likelihood used by the EM and VI engines.
    FullSupport,
}

impl Rates {
    pub fn new(mu: Arc<dyn RateFn>, phi: Arc<dyn RateFn>, support: f64) -> Result<Self> {
        if !(support > 0.0) {
            return Err(invalid(format!("trigger support must be positive, got {support}")));
        }
        Ok(Self { mu, phi, support })
    }

    /// `φ(τ)`, zero outside `(0, support]`.
    #[inline]
    pub fn trigger(&self, lag: f64) -> f64 {
        if lag > 0.0 && lag <= self.support {
            self.phi.eval(lag)
        } else {
            0.0
        }
    }

    /// `∫_a^b μ`.
    pub fn mu_integral(&self, a: f64, b: f64, rule: &GaussLegendre) -> f64 {
        if b <= a {
            return 0.0;
        }
        match (self.mu.cumulative(a), self.mu.cumulative(b)) {
            (Some(ca), Some(cb)) => cb - ca,
            _ => rule.integrate_on(a, b, |t| self.mu.eval(t)),
        }
    }

    /// `∫_a^b φ` with the integration range clipped to `[0, support]`.
    pub fn phi_integral(&self, a: f64, b: f64, rule: &GaussLegendre) -> f64 {
        let lo = a.max(0.0);
        let hi = b.min(self.support);
        if hi <= lo {
            return 0.0;
        }
        match (self.phi.cumulative(lo), self.phi.cumulative(hi)) {
            (Some(ca), Some(cb)) => cb - ca,
            _ => rule.integrate_on(lo, hi, |t| self.phi.eval(t)),
        }
    }
}

/// `μ(t) + Σ_{tᵢ < t, t - tᵢ ≤ T_φ} φ(t - tᵢ)` given the past events in `history`.
pub fn intensity(t: f64, history: &[f64], rates: &Rates) -> f64 {
    rates.mu.eval(t) + excitation(t, history, rates)
}

fn excitation(t: f64, history: &[f64], rates: &Rates) -> f64 {
    let end = history.partition_point(|&s| s < t);
    let mut acc = 0.0;
    for &s in history[..end].iter().rev() {
        let lag = t - s;
        if lag > rates.support {
            break;
        }
        acc += rates.phi.eval(lag);
    }
    acc
}

/// Log-likelihood of one sequence. Integrals without a closed form use `rule`
/// mapped onto each integration range.
pub fn log_likelihood(
    seq: &EventSequence,
    rates: &Rates,
    rule: &GaussLegendre,
    convention: Compensator,
) -> Result<f64> {
    let times = seq.times();
    let window = seq.window();
    let mut ll = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let lambda = intensity(t, &times[..i], rates);
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::NonPositiveIntensity { index: i, time: t, intensity: lambda });
        }
        ll += lambda.ln();
    }
    ll -= rates.mu_integral(0.0, window, rule);
    let full = rates.phi_integral(0.0, rates.support, rule);
    match convention {
        Compensator::FullSupport => ll -= times.len() as f64 * full,
        Compensator::Truncated => {
            for &t in times {
                let reach = window - t;
                ll -= if reach >= rates.support {
                    full
                } else {
                    rates.phi_integral(0.0, reach, rule)
                };
            }
        }
    }
    Ok(ll)
}

/// Ogata thinning on `[0, window]`, seeded for reproducibility.
pub fn simulate_thinning(rates: &Rates, window: f64, seed: u64) -> Result<EventSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(rates, window, &mut rng)
}

/// Thinning with a piecewise-constant dominating rate: `sup μ` on the remaining
/// window plus, for every event still inside the trigger support, the bound of
/// `φ` over the lags it can still reach. The bound is refreshed after every
/// candidate, accepted or not.
pub fn simulate_with_rng<R: Rng + ?Sized>(
    rates: &Rates,
    window: f64,
    rng: &mut R,
) -> Result<EventSequence> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(invalid(format!("window must be positive, got {window}")));
    }
    let mut events: Vec<f64> = Vec::new();
    let mut first_active = 0usize;
    let mut t = 0.0f64;
    loop {
        while first_active < events.len() && t - events[first_active] > rates.support {
            first_active += 1;
        }
        let mut bound = rates.mu.sup_from(t);
        for &s in &events[first_active..] {
            bound += rates.phi.sup_from(t - s);
        }
        if !bound.is_finite() {
            return Err(Error::NonFinite { location: format!("intensity bound at t = {t}"), value: bound });
        }
        if bound <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        t += wait / bound;
        if t > window {
            break;
        }
        let lambda = intensity(t, &events[first_active..], rates);
        if !lambda.is_finite() {
            return Err(Error::NonFinite { location: format!("intensity at t = {t}"), value: lambda });
        }
        if lambda > bound * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "rate bound {bound} violated by intensity {lambda} at t = {t}"
            )));
        }
        let u: f64 = rng.random();
        if u * bound <= lambda {
            events.push(t);
        }
    }
    EventSequence::new(events, window)
}
