use sgp_hawkes::config::FitConfig;
use sgp_hawkes::dataset::Dataset;
use sgp_hawkes::em::initial_model;
use sgp_hawkes::hawkes::Rates;
use sgp_hawkes::quadrature::GaussLegendre;
use sgp_hawkes::registry::EstimatorRegistry;
use sgp_hawkes::scenario::{simulate_split, Case1, Case2, Scenario};
use sgp_hawkes::sgp::Problem;
use sgp_hawkes::vi::ViEngine;

fn small(scenario: &dyn Scenario) -> Dataset {
    simulate_split(scenario, 10, 0, 3).unwrap().0
}

fn short_config() -> FitConfig {
    FitConfig { max_iter: 40, ..FitConfig::default() }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn fitted_models_survive_a_json_round_trip() {
    let reg = EstimatorRegistry::with_builtin();
    let data = small(&Case1);
    for name in ["em", "vi", "mle"] {
        let outcome = reg.get(name).unwrap().fit(&data, &short_config()).unwrap();
        let json = outcome.model.to_json().unwrap();
        let text = serde_json::to_string(&json).unwrap();
        let back = reg.load(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.method(), name);
        let (a, b) = (outcome.model.rates().unwrap(), back.rates().unwrap());
        for k in 0..=40 {
            let t = k as f64 * data.window() / 40.0;
            let tau = k as f64 * data.support() / 40.0;
            assert!(close(a.mu.eval(t), b.mu.eval(t), 1e-12), "{name} mu({t})");
            assert!(close(a.phi.eval(tau), b.phi.eval(tau), 1e-12), "{name} phi({tau})");
        }
        assert_eq!(back.to_json().unwrap(), json);
    }
}

#[test]
fn em_objective_is_monotone_with_frozen_hyperparameters() {
    let reg = EstimatorRegistry::with_builtin();
    for scenario in [&Case1 as &dyn Scenario, &Case2] {
        let cfg = FitConfig { max_iter: 60, tol: 0.0, hyper_refresh_every: 0, ..FitConfig::default() };
        let report = reg.get("em").unwrap().fit(&small(scenario), &cfg).unwrap().report;
        assert_eq!(report.objective.len(), 61);
        assert!(report.hyperparams.is_empty());
        assert!(report.worst_relative_decrease() <= 1e-3, "{}: {}", scenario.name(), report.worst_relative_decrease());
    }
}

#[test]
fn vi_factors_stay_valid() {
    let data = small(&Case2);
    let cfg = FitConfig::default();
    let problem = Problem::new(&data, cfg.shape()).unwrap();
    let (hp_mu, hp_phi) = cfg.initial_hyperparams(&problem.mu.grid, &problem.phi.grid).unwrap();
    let init = initial_model(&problem, hp_mu, hp_phi);
    let mut engine = ViEngine::new(
        &problem,
        hp_mu,
        hp_phi,
        init.mu.lambda_star,
        init.phi.lambda_star,
        cfg.gh_order,
        false,
    )
    .unwrap();
    for it in 1..=30 {
        let mut step = engine.step().unwrap();
        if it % 10 == 0 {
            engine.refresh(&mut step).unwrap();
        }
        assert!(step.elbo.is_finite());
        let model = engine.model();
        for c in [&model.mu, &model.phi] {
            assert!(c.q_lambda.alpha > 0.0 && c.q_lambda.beta > 0.0);
            let cov = &c.q_u.cov;
            assert!((cov - cov.transpose()).amax() <= 1e-10 * cov.amax());
            assert!(cov.clone().cholesky().is_some(), "iteration {it}: covariance not positive definite");
            assert!(c.q_u.mean.iter().all(|v| v.is_finite()));
        }
        assert!(engine.branching().max_row_error(&problem.layout.pairs) < 1e-12);
    }
}

fn refinement_gap(rates: &Rates, window: f64, support: f64) -> f64 {
    let (lo, hi) = (GaussLegendre::new(50).unwrap(), GaussLegendre::new(100).unwrap());
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let mu = |t: f64| rates.mu.eval(t);
    let phi = |t: f64| rates.phi.eval(t);
    [
        rel(lo.integrate_on(0.0, window, mu), hi.integrate_on(0.0, window, mu)),
        rel(lo.integrate_on(0.0, support, phi), hi.integrate_on(0.0, support, phi)),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[test]
fn quadrature_is_refined_enough_for_fitted_rates() {
    let reg = EstimatorRegistry::with_builtin();
    for scenario in [&Case1 as &dyn Scenario, &Case2] {
        let data = small(scenario);
        for name in ["em", "vi"] {
            let outcome = reg.get(name).unwrap().fit(&data, &short_config()).unwrap();
            let gap = refinement_gap(&outcome.model.rates().unwrap(), data.window(), data.support());
            assert!(gap < 1e-6, "{} {name}: {gap}", scenario.name());
        }
    }
}
