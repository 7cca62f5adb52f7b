use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgp_hawkes::dataset::Dataset;
use sgp_hawkes::eval::{ks_statistic, rescale, test_ll};
use sgp_hawkes::hawkes::{simulate_thinning, EventSequence, Rates};
use sgp_hawkes::mle::{exp_hawkes_nll, exp_hawkes_nll_grad, fit_mle, ExpHawkesParams, MleOptions};
use sgp_hawkes::quadrature::GaussLegendre;
use sgp_hawkes::rates::{Constant, ExpDecay};
use sgp_hawkes::scenario::{simulate_replicates, Case1, Case2, Scenario};

fn exp_rates(mu: f64, alpha: f64, beta: f64, support: f64) -> Rates {
    Rates::new(Arc::new(Constant(mu)), Arc::new(ExpDecay { alpha, beta }), support).unwrap()
}

fn poisson(mu: f64) -> Rates {
    Rates::new(Arc::new(Constant(mu)), Arc::new(Constant(0.0)), 1.0).unwrap()
}

#[test]
fn unit_poisson_mean_count() {
    let seqs = simulate_replicates(&poisson(1.0), 1000.0, 200, 11, 0).unwrap();
    let mean = seqs.iter().map(|s| s.len() as f64).sum::<f64>() / 200.0;
    assert!((mean - 1000.0).abs() <= 3.0 * 1000f64.sqrt(), "mean count {mean}");
}

#[test]
fn case2_mean_count_matches_branching_expectation() {
    let rates = Case2.rates();
    let window = Case2.window();
    let rule = GaussLegendre::new(200).unwrap();
    let mu_bar = rule.integrate_on(0.0, window, |t| rates.mu.eval(t)) / window;
    let mass = rule.integrate_on(0.0, Case2.support(), |t| rates.phi.eval(t));
    let expected = window * mu_bar / (1.0 - mass);
    let seqs = simulate_replicates(&rates, window, 100, 5, 0).unwrap();
    let mean = seqs.iter().map(|s| s.len() as f64).sum::<f64>() / 100.0;
    assert!((mean / expected - 1.0).abs() < 0.1, "{mean} vs {expected}");
}

#[test]
fn simulations_pass_their_own_rescaling_test() {
    let rule = GaussLegendre::new(32).unwrap();
    for scenario in [&Case1 as &dyn Scenario, &Case2] {
        let rates = scenario.rates();
        let mut failures = 0;
        for seed in 0..50 {
            let seq = simulate_thinning(&rates, scenario.window(), seed).unwrap();
            let sample = rescale(&rates, &seq, &rule);
            assert_eq!(sample.clamped, 0);
            let (_, p) = ks_statistic(&sample.z).unwrap();
            if p <= 0.01 {
                failures += 1;
            }
        }
        assert!(failures <= 2, "{}: {failures} of 50 seeds rejected", scenario.name());
    }
}

#[test]
fn ks_calibration_on_uniform_draws() {
    let mut passes = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let (_, p) = ks_statistic(&z).unwrap();
        if p > 0.01 {
            passes += 1;
        }
    }
    assert!(passes >= 99, "{passes} of 100 seeds passed");
}

/// `O(N²)` sum over all earlier events, no recursion.
fn direct_nll(p: &ExpHawkesParams, seq: &EventSequence) -> f64 {
    let ts = seq.times();
    let mut ll = -p.mu * seq.window();
    for (i, &t) in ts.iter().enumerate() {
        let excite: f64 = ts[..i].iter().map(|s| p.alpha * (-p.beta * (t - s)).exp()).sum();
        ll += (p.mu + excite).ln();
        ll -= p.alpha / p.beta * (1.0 - (-p.beta * (seq.window() - t)).exp());
    }
    -ll
}

#[test]
fn recursion_matches_direct_sum() {
    let truth = ExpHawkesParams::new(1.0, 0.5, 1.3).unwrap();
    let rates = exp_rates(1.0, 0.5, 1.3, 40.0);
    for seed in 0..5 {
        let seq = simulate_thinning(&rates, 90.0, seed).unwrap();
        let n = seq.len().min(200);
        let seq = EventSequence::new(seq.times()[..n].to_vec(), 90.0).unwrap();
        for p in [truth, ExpHawkesParams::new(0.3, 2.0, 4.0).unwrap()] {
            let (a, b) = (exp_hawkes_nll(&p, &seq), direct_nll(&p, &seq));
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let seq = simulate_thinning(&exp_rates(0.8, 0.6, 1.5, 30.0), 200.0, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let beta = rng.random_range(0.2..5.0);
        let p = ExpHawkesParams::new(rng.random_range(0.1..2.0), beta * rng.random_range(0.05..0.9), beta).unwrap();
        let (_, g) = exp_hawkes_nll_grad(&p, &seq);
        let x = [p.mu, p.alpha, p.beta];
        for k in 0..3 {
            let h = 1e-6 * x[k];
            let (mut up, mut dn) = (x, x);
            up[k] += h;
            dn[k] -= h;
            let at = |v: [f64; 3]| exp_hawkes_nll(&ExpHawkesParams { mu: v[0], alpha: v[1], beta: v[2] }, &seq);
            let fd = (at(up) - at(dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "component {k}: {fd} vs {}", g[k]);
        }
    }
}

#[test]
fn mle_recovers_simulated_parameters() {
    let truth = ExpHawkesParams::new(1.0, 0.4, 1.0).unwrap();
    let rates = exp_rates(1.0, 0.4, 1.0, 40.0);
    let seqs = simulate_replicates(&rates, 2000.0, 20, 21, 0).unwrap();
    let mut sums = [0.0; 3];
    for seq in seqs {
        let data = Dataset::single(seq.clone(), 40.0).unwrap();
        let fit = fit_mle(&data, 3, &MleOptions::default()).unwrap();
        assert!(fit.nll <= exp_hawkes_nll(&truth, &seq) + 1e-6);
        sums[0] += fit.params.mu / 20.0;
        sums[1] += fit.params.alpha / 20.0;
        sums[2] += fit.params.beta / 20.0;
    }
    for (est, want) in sums.iter().zip([1.0, 0.4, 1.0]) {
        assert!((est / want - 1.0).abs() < 0.15, "mean {est} vs {want}");
    }
}

fn poisson_fits() -> Vec<(f64, f64, ExpHawkesParams)> {
    simulate_replicates(&poisson(1.0), 2000.0, 20, 4, 0)
        .unwrap()
        .into_iter()
        .map(|seq| {
            let n = seq.len() as f64;
            let pois = n - n * (n / 2000.0).ln();
            let fit = fit_mle(&Dataset::single(seq, 10.0).unwrap(), 3, &MleOptions::default()).unwrap();
            (pois, fit.nll, fit.params)
        })
        .collect()
}

#[test]
fn mle_on_poisson_data_is_indistinguishable_from_poisson() {
    // 99% quantile of chi-square with two degrees of freedom.
    const CRITICAL: f64 = 9.21;
    for (k, (pois, nll, p)) in poisson_fits().into_iter().enumerate() {
        let lr = 2.0 * (pois - nll);
        assert!((-1e-6..CRITICAL).contains(&lr), "replicate {k}: {p:?}, statistic {lr}");
    }
}

#[test]
#[ignore = "the amplitude is not identified without excitation: spike fits at large beta and trend fits at small beta"]
fn mle_on_poisson_data_has_small_amplitude() {
    let fits = poisson_fits();
    let bad: Vec<_> = fits.iter().filter(|f| f.2.alpha > 0.05).map(|f| f.2).collect();
    assert!(bad.is_empty(), "{} of {} fits with alpha > 0.05: {bad:?}", bad.len(), fits.len());
}

#[test]
fn truth_beats_constant_model_on_holdout() {
    let rates = Case1.rates();
    let rule = GaussLegendre::new(32).unwrap();
    let seqs = simulate_replicates(&rates, Case1.window(), 20, 8, 0).unwrap();
    let mass = rule.integrate_on(0.0, Case1.support(), |t| rates.phi.eval(t));
    let flat = poisson(1.0 / (1.0 - mass));
    let (mut good, mut bad) = (0.0, 0.0);
    for seq in &seqs {
        good += test_ll(&rates, seq, &rule).unwrap() / 20.0;
        bad += test_ll(&flat, seq, &rule).unwrap() / 20.0;
    }
    assert!(good >= bad, "{good} vs {bad}");
}
