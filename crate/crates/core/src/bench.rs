//! Wall-time measurements at fixed iteration counts.

use std::time::Instant;

use crate::config::FitConfig;
use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::hawkes::EventSequence;
use crate::registry::Estimator;
use crate::scenario::{simulate_replicates, Scenario};

/// One sequence from `scenario` holding exactly `n_events` events, cut at the
/// last of them. The simulation window grows until enough events appear.
pub fn sized_sequence(scenario: &dyn Scenario, n_events: usize, seed: u64) -> Result<Dataset> {
    if n_events == 0 {
        return Err(invalid("benchmark size must be positive"));
    }
    let rates = scenario.rates();
    let mut window = scenario.window();
    for _ in 0..40 {
        let seq = simulate_replicates(&rates, window, 1, seed, 0)?.remove(0);
        if seq.len() >= n_events {
            let times = seq.times()[..n_events].to_vec();
            let end = times[n_events - 1];
            return Dataset::single(EventSequence::new(times, end)?, scenario.support());
        }
        window *= 2.0;
    }
    Err(invalid(format!("could not simulate {n_events} events")))
}

/// Seconds taken by `estimator` for exactly `iterations` iterations.
pub fn time_fit(estimator: &dyn Estimator, data: &Dataset, config: &FitConfig, iterations: usize) -> Result<f64> {
    let cfg = FitConfig { max_iter: iterations, tol: 0.0, ..config.clone() };
    let start = Instant::now();
    estimator.fit(data, &cfg)?;
    Ok(start.elapsed().as_secs_f64())
}

/// Median of `repeats` timings.
pub fn median_time(
    estimator: &dyn Estimator,
    data: &Dataset,
    config: &FitConfig,
    iterations: usize,
    repeats: usize,
) -> Result<f64> {
    let mut times = (0..repeats.max(1))
        .map(|_| time_fit(estimator, data, config, iterations))
        .collect::<Result<Vec<_>>>()?;
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Case1;

    #[test]
    fn sized_sequence_has_requested_size() {
        let d = sized_sequence(&Case1, 700, 3).unwrap();
        assert_eq!(d.total_events(), 700);
        let seq = &d.sequences()[0];
        assert_eq!(seq.window(), *seq.times().last().unwrap());
        assert!(sized_sequence(&Case1, 0, 3).is_err());
    }
}
