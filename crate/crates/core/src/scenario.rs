//! Named ground-truth scenarios for synthetic experiments.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hawkes::{simulate_with_rng, EventSequence, Rates};
use crate::rates::{Constant, DampedSine, HalfSine, Sinusoid, Tabulated};

/// A generating process: rates plus the window and trigger support it is
/// meant to be simulated on.
pub trait Scenario: Send + Sync {
    fn name(&self) -> &str;
    fn window(&self) -> f64;
    fn support(&self) -> f64;
    fn rates(&self) -> Rates;
}

/// Constant baseline `μ = 1` with a half-sine trigger `0.33 sin τ` on `(0, π]`.
#[derive(Debug, Clone, Copy)]
pub struct Case1;

impl Scenario for Case1 {
    fn name(&self) -> &str {
        "case1"
    }
    fn window(&self) -> f64 {
        100.0
    }
    fn support(&self) -> f64 {
        6.0
    }
    fn rates(&self) -> Rates {
        Rates {
            mu: Arc::new(Constant(1.0)),
            phi: Arc::new(HalfSine { scale: 0.33 }),
            support: self.support(),
        }
    }
}

/// Periodic baseline `sin(2πt/T) + 1` and a damped oscillating trigger
/// `0.3 (sin(2πτ/3) + 1) e^{-0.7τ}`.
#[derive(Debug, Clone, Copy)]
pub struct Case2;

impl Scenario for Case2 {
    fn name(&self) -> &str {
        "case2"
    }
    fn window(&self) -> f64 {
        100.0
    }
    fn support(&self) -> f64 {
        6.0
    }
    fn rates(&self) -> Rates {
        Rates {
            mu: Arc::new(Sinusoid { period: self.window(), offset: 1.0 }),
            phi: Arc::new(DampedSine { scale: 0.3, freq: 2.0 * PI / 3.0, decay: 0.7 }),
            support: self.support(),
        }
    }
}

/// A user-supplied scenario with piecewise-linear rate tables.
#[derive(Debug, Clone)]
pub struct TabulatedScenario {
    pub name: String,
    pub window: f64,
    pub support: f64,
    pub mu: Tabulated,
    pub phi: Tabulated,
}

impl Scenario for TabulatedScenario {
    fn name(&self) -> &str {
        &self.name
    }
    fn window(&self) -> f64 {
        self.window
    }
    fn support(&self) -> f64 {
        self.support
    }
    fn rates(&self) -> Rates {
        Rates { mu: Arc::new(self.mu.clone()), phi: Arc::new(self.phi.clone()), support: self.support }
    }
}

#[derive(Default, Clone)]
pub struct ScenarioRegistry {
    scenarios: BTreeMap<String, Arc<dyn Scenario>>,
}

impl ScenarioRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtin() -> Self {
        let mut reg = Self::new();
        reg.register(Arc::new(Case1));
        reg.register(Arc::new(Case2));
        reg
    }

    pub fn register(&mut self, scenario: Arc<dyn Scenario>) {
        self.scenarios.insert(scenario.name().to_string(), scenario);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Scenario>> {
        self.scenarios
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Unknown { kind: "scenario", name: name.to_string() })
    }

    pub fn names(&self) -> Vec<&str> {
        self.scenarios.keys().map(String::as_str).collect()
    }
}

/// Independent replicates on `[0, window]`. Replicate `k` uses stream
/// `first_stream + k` of a generator seeded with `seed`, so train and test
/// sets drawn with disjoint stream ranges never share randomness.
pub fn simulate_replicates(
    rates: &Rates,
    window: f64,
    count: usize,
    seed: u64,
    first_stream: u64,
) -> Result<Vec<EventSequence>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(first_stream + k);
            simulate_with_rng(rates, window, &mut rng)
        })
        .collect()
}

/// Training and hold-out sets for a scenario.
pub fn simulate_split(scenario: &dyn Scenario, n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let rates = scenario.rates();
    let (w, s) = (scenario.window(), scenario.support());
    let train = simulate_replicates(&rates, w, n_train, seed, 0)?;
    let test = simulate_replicates(&rates, w, n_test, seed, n_train as u64)?;
    Ok((Dataset::new(train, w, s)?, Dataset::new(test, w, s)?))
}
