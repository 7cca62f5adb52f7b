//! Expectation–maximization for the sigmoid-GP Hawkes process with
//! Pólya-Gamma and latent-Poisson augmentation. Every quantity is a point
//! estimate; the mean-field counterpart lives in [`crate::vi`].

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::FitConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fitted::{LatentProjection, SigmoidRate};
use crate::hawkes::Rates;
use crate::kernel::{InducingGrid, KernelHyperparams};
use crate::layout::{BranchingPosterior, PairIndex};
use crate::pg::{log_sigmoid, pg_mean, sigmoid};
use crate::quadrature::QuadratureGrid;
use crate::report::{FitReport, GridEstimates, HyperRecord};
use crate::sgp::{
    gaussian_update, precision_and_rhs, refresh_hyperparams, Basis, ComponentSpace, HyperUpdate, Problem,
    QuadraticStats, RefreshInput, CHUNK,
};

/// One latent function `λ*·σ(f)` with `f` represented by its inducing values.
#[derive(Debug, Clone, PartialEq)]
pub struct SgpComponent {
    pub lambda_star: f64,
    pub grid: InducingGrid,
    pub u: DVector<f64>,
    pub hp: KernelHyperparams,
}

impl SgpComponent {
    pub fn rate(&self, relative_jitter: f64) -> Result<SigmoidRate> {
        let latent = LatentProjection::new(
            self.grid.clone(),
            self.hp,
            &self.u,
            None,
            relative_jitter * self.hp.theta0,
        )?;
        Ok(SigmoidRate::new(self.lambda_star, latent))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmModel {
    pub mu: SgpComponent,
    pub phi: SgpComponent,
    pub window: f64,
    pub support: f64,
    pub relative_jitter: f64,
}

impl EmModel {
    pub fn rates(&self) -> Result<Rates> {
        Rates::new(
            Arc::new(self.mu.rate(self.relative_jitter)?),
            Arc::new(self.phi.rate(self.relative_jitter)?),
            self.support,
        )
    }
}

/// Latent function values of a model at every location the engine touches.
#[derive(Debug, Clone)]
pub struct LatentValues {
    pub f_events: Vec<f64>,
    pub f_nodes: Vec<f64>,
    pub g_pairs: Vec<f64>,
    pub g_nodes: Vec<f64>,
}

impl LatentValues {
    pub fn new(basis_mu: &Basis, basis_phi: &Basis, u_mu: &DVector<f64>, u_phi: &DVector<f64>) -> Self {
        Self {
            f_events: basis_mu.obs.project(u_mu),
            f_nodes: basis_mu.nodes.project(u_mu),
            g_pairs: basis_phi.obs.project(u_phi),
            g_nodes: basis_phi.nodes.project(u_phi),
        }
    }
}

/// `E[ω]` at events (baseline) and at pairs (trigger).
#[derive(Debug, Clone, PartialEq)]
pub struct PgMeans {
    pub events: Vec<f64>,
    pub pairs: Vec<f64>,
}

pub fn estep_pg(f_events: &[f64], g_pairs: &[f64]) -> PgMeans {
    PgMeans {
        events: f_events.par_iter().map(|&f| pg_mean(1.0, f)).collect(),
        pairs: g_pairs.par_iter().map(|&g| pg_mean(1.0, g)).collect(),
    }
}

/// ω-marginal rate of the latent Poisson process at the quadrature nodes,
/// the same rate weighted by `E[ω]`, and its integral over the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRate {
    pub rate: Vec<f64>,
    pub rate_omega: Vec<f64>,
    pub mass: f64,
}

pub fn estep_latent_rate(lambda_star: f64, f_nodes: &[f64], quad: &QuadratureGrid) -> LatentRate {
    let rate: Vec<f64> = f_nodes.iter().map(|&f| lambda_star * sigmoid(-f)).collect();
    let rate_omega = rate.iter().zip(f_nodes).map(|(r, &f)| r * pg_mean(1.0, f)).collect();
    let mass = quad.dot(&rate);
    LatentRate { rate, rate_omega, mass }
}

/// Responsibilities proportional to `λ*_μ σ(f(tᵢ))` and `λ*_φ σ(g(tᵢ − tⱼ))`.
pub fn estep_branching(
    pairs: &PairIndex,
    lambda_mu: f64,
    f_events: &[f64],
    lambda_phi: f64,
    g_pairs: &[f64],
) -> BranchingPosterior {
    let bg: Vec<f64> = f_events.iter().map(|&f| lambda_mu.ln() + log_sigmoid(f)).collect();
    let tr: Vec<f64> = g_pairs.iter().map(|&g| lambda_phi.ln() + log_sigmoid(g)).collect();
    BranchingPosterior::from_log_weights(pairs, &bg, &tr)
}

#[derive(Debug, Clone)]
pub struct EStepStats {
    pub pg: PgMeans,
    pub mu: LatentRate,
    pub phi: LatentRate,
}

/// Closed-form update of one component given its responsibilities, PG
/// means and latent rate. Returns the new `λ*`, the new inducing values and
/// the quadratic statistics they were solved from.
pub fn mstep_component(
    space: &ComponentSpace,
    basis: &Basis,
    resp: &[f64],
    omega: &[f64],
    latent: &LatentRate,
) -> Result<(f64, DVector<f64>, QuadraticStats)> {
    let e = space.exposure;
    let lambda_star = (resp.iter().sum::<f64>() + e * latent.mass) / (e * space.domain());
    let stats = QuadraticStats::assemble(space, resp, omega, &latent.rate, &latent.rate_omega);
    let (p, r) = precision_and_rhs(basis, &stats);
    let post = gaussian_update(&basis.gram, &p, &r)?;
    Ok((lambda_star, post.mean, stats))
}

/// Result of an M-step: the updated model plus the statistics behind it,
/// kept for the hyperparameter search.
#[derive(Debug, Clone)]
pub struct MStep {
    pub model: EmModel,
    pub stats_mu: QuadraticStats,
    pub stats_phi: Option<QuadraticStats>,
}

pub fn mstep(
    problem: &Problem,
    basis_mu: &Basis,
    basis_phi: &Basis,
    stats: &EStepStats,
    branching: &BranchingPosterior,
    prev: &EmModel,
) -> Result<MStep> {
    let mut model = prev.clone();
    let (lambda, u, stats_mu) =
        mstep_component(&problem.mu, basis_mu, &branching.background, &stats.pg.events, &stats.mu)?;
    model.mu.lambda_star = lambda;
    model.mu.u = u;
    // Without events the trigger is unidentified; it stays where it was.
    let stats_phi = if problem.n_events() > 0 {
        let (lambda, u, s) =
            mstep_component(&problem.phi, basis_phi, &branching.parent, &stats.pg.pairs, &stats.phi)?;
        model.phi.lambda_star = lambda;
        model.phi.u = u;
        Some(s)
    } else {
        None
    };
    Ok(MStep { model, stats_mu, stats_phi })
}

/// Penalized log-likelihood with the per-event full-support trigger
/// compensator, integrals on the engine's quadrature nodes:
/// `Σᵢ log λ(tᵢ) − R∫μ − N∫φ − ½uᵀK⁻¹u` (both components).
pub fn em_objective(problem: &Problem, basis_mu: &Basis, basis_phi: &Basis, model: &EmModel, values: &LatentValues) -> f64 {
    let pairs = &problem.layout.pairs;
    let (lm, lp) = (model.mu.lambda_star, model.phi.lambda_star);
    let n = problem.n_events();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let log_terms: f64 = starts
        .par_iter()
        .map(|&s| {
            let mut acc = 0.0;
            for i in s..(s + CHUNK).min(n) {
                let trig: f64 = values.g_pairs[pairs.row(i)].iter().map(|&g| sigmoid(g)).sum();
                acc += (lm * sigmoid(values.f_events[i]) + lp * trig).ln();
            }
            acc
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let int_mu: f64 = problem.mu.quad.dot(&values.f_nodes.iter().map(|&f| lm * sigmoid(f)).collect::<Vec<_>>());
    let int_phi: f64 = problem.phi.quad.dot(&values.g_nodes.iter().map(|&g| lp * sigmoid(g)).collect::<Vec<_>>());
    let pen = |b: &Basis, u: &DVector<f64>| 0.5 * u.dot(&b.gram.solve(u));
    log_terms - problem.mu.exposure * int_mu - problem.phi.exposure * int_phi - pen(basis_mu, &model.mu.u)
        - pen(basis_phi, &model.phi.u)
}

/// Initial model: zero inducing values, `λ*_μ = 2N/(RT)` (or `1/T` for empty
/// data) and `λ*_φ = 1/T_φ`.
pub fn initial_model(problem: &Problem, hp_mu: KernelHyperparams, hp_phi: KernelHyperparams) -> EmModel {
    let n = problem.n_events() as f64;
    let r = problem.layout.n_sequences as f64;
    let window = problem.mu.domain();
    let support = problem.phi.domain();
    let lambda_mu = if n > 0.0 { 2.0 * n / (r * window) } else { 1.0 / window };
    EmModel {
        mu: SgpComponent {
            lambda_star: lambda_mu,
            grid: problem.mu.grid.clone(),
            u: DVector::zeros(problem.mu.grid.len()),
            hp: hp_mu,
        },
        phi: SgpComponent {
            lambda_star: 1.0 / support,
            grid: problem.phi.grid.clone(),
            u: DVector::zeros(problem.phi.grid.len()),
            hp: hp_phi,
        },
        window,
        support,
        relative_jitter: problem.relative_jitter,
    }
}

/// Iteration state of an EM fit.
pub struct EmEngine<'a> {
    problem: &'a Problem,
    basis_mu: Basis,
    basis_phi: Basis,
    model: EmModel,
    values: LatentValues,
    objective: f64,
}

/// What one call to [`EmEngine::step`] did.
#[derive(Debug, Clone)]
pub struct EmStep {
    pub objective: f64,
    pub branching: BranchingPosterior,
    pub e_stats: EStepStats,
    pub stats_mu: QuadraticStats,
    pub stats_phi: Option<QuadraticStats>,
}

impl<'a> EmEngine<'a> {
    pub fn new(problem: &'a Problem, model: EmModel) -> Result<Self> {
        let basis_mu = problem.basis_mu(model.mu.hp)?;
        let basis_phi = problem.basis_phi(model.phi.hp)?;
        let values = LatentValues::new(&basis_mu, &basis_phi, &model.mu.u, &model.phi.u);
        let objective = em_objective(problem, &basis_mu, &basis_phi, &model, &values);
        Ok(Self { problem, basis_mu, basis_phi, model, values, objective })
    }

    pub fn model(&self) -> &EmModel {
        &self.model
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn values(&self) -> &LatentValues {
        &self.values
    }

    /// E-step at the current model.
    pub fn expectations(&self) -> (EStepStats, BranchingPosterior) {
        let v = &self.values;
        let m = &self.model;
        let pg = estep_pg(&v.f_events, &v.g_pairs);
        let mu = estep_latent_rate(m.mu.lambda_star, &v.f_nodes, &self.problem.mu.quad);
        let phi = estep_latent_rate(m.phi.lambda_star, &v.g_nodes, &self.problem.phi.quad);
        let branching = estep_branching(
            &self.problem.layout.pairs,
            m.mu.lambda_star,
            &v.f_events,
            m.phi.lambda_star,
            &v.g_pairs,
        );
        (EStepStats { pg, mu, phi }, branching)
    }

    fn install(&mut self, model: EmModel) -> Result<()> {
        let values = LatentValues::new(&self.basis_mu, &self.basis_phi, &model.mu.u, &model.phi.u);
        let objective = em_objective(self.problem, &self.basis_mu, &self.basis_phi, &model, &values);
        if !objective.is_finite() {
            return Err(Error::NonFinite { location: "EM objective".into(), value: objective });
        }
        self.model = model;
        self.values = values;
        self.objective = objective;
        Ok(())
    }

    /// One full E- and M-step.
    pub fn step(&mut self) -> Result<EmStep> {
        let (e_stats, branching) = self.expectations();
        let m = mstep(self.problem, &self.basis_mu, &self.basis_phi, &e_stats, &branching, &self.model)?;
        self.install(m.model)?;
        Ok(EmStep {
            objective: self.objective,
            branching,
            e_stats,
            stats_mu: m.stats_mu,
            stats_phi: m.stats_phi,
        })
    }

    /// Search new kernel hyperparameters for the statistics of the last step,
    /// then re-solve the inducing values under them.
    pub fn refresh(&mut self, step: &EmStep) -> Result<(HyperUpdate, Option<HyperUpdate>)> {
        let p = self.problem;
        let input_mu = RefreshInput {
            space: &p.mu,
            obs_points: &p.layout.times,
            stats: &step.stats_mu,
            relative_jitter: p.relative_jitter,
        };
        let up_mu = refresh_hyperparams(&input_mu, self.model.mu.hp);
        let up_phi = step.stats_phi.as_ref().map(|stats| {
            let input = RefreshInput {
                space: &p.phi,
                obs_points: p.layout.pairs.lags(),
                stats,
                relative_jitter: p.relative_jitter,
            };
            refresh_hyperparams(&input, self.model.phi.hp)
        });
        let mut model = self.model.clone();
        if up_mu.hp != model.mu.hp {
            self.basis_mu = p.basis_mu(up_mu.hp)?;
            let (pm, r) = precision_and_rhs(&self.basis_mu, &step.stats_mu);
            model.mu.u = gaussian_update(&self.basis_mu.gram, &pm, &r)?.mean;
            model.mu.hp = up_mu.hp;
        }
        if let (Some(up), Some(stats)) = (&up_phi, &step.stats_phi) {
            if up.hp != model.phi.hp {
                self.basis_phi = p.basis_phi(up.hp)?;
                let (pm, r) = precision_and_rhs(&self.basis_phi, stats);
                model.phi.u = gaussian_update(&self.basis_phi.gram, &pm, &r)?.mean;
                model.phi.hp = up.hp;
            }
        }
        self.install(model)?;
        Ok((up_mu, up_phi))
    }
}

/// Run EM to convergence on a dataset.
pub fn fit_em(data: &Dataset, config: &FitConfig) -> Result<(EmModel, FitReport)> {
    config.validate()?;
    let start = Instant::now();
    let problem = Problem::new(data, config.shape())?;
    let (hp_mu, hp_phi) = config.initial_hyperparams(&problem.mu.grid, &problem.phi.grid)?;
    let mut engine = EmEngine::new(&problem, initial_model(&problem, hp_mu, hp_phi))?;
    let mut report = FitReport { method: "em".into(), ..Default::default() };
    report.objective.push(engine.objective());
    for it in 1..=config.max_iter {
        let prev = engine.objective();
        let step = engine.step()?;
        if config.hyper_refresh_every > 0 && it % config.hyper_refresh_every == 0 {
            let (up_mu, up_phi) = engine.refresh(&step)?;
            let failed = up_mu.failed || up_phi.is_some_and(|u| u.failed);
            if failed {
                report.warnings.push(format!("iteration {it}: hyperparameter search failed; kept previous values"));
            }
            report.hyperparams.push(HyperRecord {
                iteration: it,
                mu: engine.model().mu.hp,
                phi: engine.model().phi.hp,
                failed,
            });
        }
        let now = engine.objective();
        report.objective.push(now);
        report.iterations = it;
        if ((now - prev) / prev.abs()).abs() < config.tol {
            report.converged = true;
            break;
        }
    }
    let model = engine.model().clone();
    report.estimates = GridEstimates::from_rates(&model.rates()?, data.window(), config.eval_points);
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hawkes::{log_likelihood, Compensator, EventSequence};
    use crate::quadrature::{gauss_legendre, GaussLegendre};

    fn toy_problem() -> (Dataset, Problem) {
        let a = EventSequence::new(vec![0.4, 1.1, 1.3, 4.0, 6.2, 6.9, 7.0, 9.5], 10.0).unwrap();
        let b = EventSequence::new(vec![2.0, 2.4, 8.8], 10.0).unwrap();
        let data = Dataset::new(vec![a, b], 10.0, 2.0).unwrap();
        let cfg = FitConfig { s_mu: 5, s_phi: 4, quad_order_t: 30, quad_order_tphi: 20, ..Default::default() };
        let p = Problem::new(&data, cfg.shape()).unwrap();
        (data, p)
    }

    #[test]
    fn pg_examples() {
        let pg = estep_pg(&[0.0, 2.0], &[]);
        assert_eq!(pg.events[0], 0.25);
        assert!((pg.events[1] - 1f64.tanh() / 4.0).abs() < 1e-15);
        assert!(pg.pairs.is_empty());
    }

    #[test]
    fn latent_rate_examples() {
        let quad = gauss_legendre(20, 0.0, 10.0).unwrap();
        let r = estep_latent_rate(2.0, &[0.0; 20], &quad);
        assert!(r.rate.iter().all(|&v| v == 1.0));
        assert!((r.mass - 10.0).abs() < 1e-12);
        assert!(r.rate_omega.iter().all(|&v| v == 0.25));
        let r = estep_latent_rate(2.0, &[30.0; 20], &quad);
        assert!(r.mass < 1e-11);
    }

    #[test]
    fn zero_latent_mstep_example() {
        // All events background, f ≡ 0, λ*_old = λ₀: λ̂* = (N + λ₀T/2)/T.
        let (_, p) = toy_problem();
        let hp = KernelHyperparams::new(1.0, 0.3).unwrap();
        let basis = p.basis_mu(hp).unwrap();
        let lambda0 = 1.7;
        let f_nodes = vec![0.0; p.mu.quad.len()];
        let latent = estep_latent_rate(lambda0, &f_nodes, &p.mu.quad);
        let n = p.n_events();
        let space = ComponentSpace { exposure: 1.0, ..p.mu.clone() };
        let (lambda, _, _) = mstep_component(&space, &basis, &vec![1.0; n], &vec![0.25; n], &latent).unwrap();
        assert!((lambda - (n as f64 + lambda0 * 10.0 / 2.0) / 10.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_star_definition_holds_after_mstep() {
        let (_, p) = toy_problem();
        let model = initial_model(&p, KernelHyperparams::new(1.0, 0.2).unwrap(), KernelHyperparams::new(1.0, 1.0).unwrap());
        let mut engine = EmEngine::new(&p, model).unwrap();
        for _ in 0..3 {
            let step = engine.step().unwrap();
            let m = engine.model();
            let lhs = m.mu.lambda_star * p.mu.exposure * 10.0;
            let rhs = step.branching.expected_background() + p.mu.exposure * step.e_stats.mu.mass;
            assert!((lhs - rhs).abs() < 1e-10 * rhs);
            assert!(step.branching.max_row_error(&p.layout.pairs) < 1e-12);
        }
    }

    #[test]
    fn objective_matches_likelihood() {
        let (data, p) = toy_problem();
        let mut model = initial_model(&p, KernelHyperparams::new(1.5, 0.2).unwrap(), KernelHyperparams::new(0.7, 1.1).unwrap());
        model.mu.u = DVector::from_vec(vec![0.3, -0.2, 0.8, 0.1, -0.5]);
        model.phi.u = DVector::from_vec(vec![1.0, 0.2, -0.7, -1.5]);
        let bm = p.basis_mu(model.mu.hp).unwrap();
        let bp = p.basis_phi(model.phi.hp).unwrap();
        let values = LatentValues::new(&bm, &bp, &model.mu.u, &model.phi.u);
        let obj = em_objective(&p, &bm, &bp, &model, &values);
        let rates = model.rates().unwrap();
        let rule = GaussLegendre::new(30).unwrap();
        let ll: f64 = data
            .sequences()
            .iter()
            .map(|s| log_likelihood(s, &rates, &rule, Compensator::FullSupport).unwrap())
            .sum();
        let pen = 0.5 * model.mu.u.dot(&bm.gram.solve(&model.mu.u)) + 0.5 * model.phi.u.dot(&bp.gram.solve(&model.phi.u));
        assert!((obj - (ll - pen)).abs() < 1e-8 * obj.abs(), "{obj} vs {}", ll - pen);
    }

    #[test]
    fn zero_u_objective_is_half_rate_likelihood() {
        let (data, p) = toy_problem();
        let model = initial_model(&p, KernelHyperparams::new(1.0, 0.2).unwrap(), KernelHyperparams::new(1.0, 1.0).unwrap());
        let bm = p.basis_mu(model.mu.hp).unwrap();
        let bp = p.basis_phi(model.phi.hp).unwrap();
        let values = LatentValues::new(&bm, &bp, &model.mu.u, &model.phi.u);
        let obj = em_objective(&p, &bm, &bp, &model, &values);
        let rates = Rates::new(
            Arc::new(crate::rates::Constant(model.mu.lambda_star / 2.0)),
            Arc::new(crate::rates::Constant(model.phi.lambda_star / 2.0)),
            2.0,
        )
        .unwrap();
        let rule = GaussLegendre::new(10).unwrap();
        let ll: f64 = data
            .sequences()
            .iter()
            .map(|s| log_likelihood(s, &rates, &rule, Compensator::FullSupport).unwrap())
            .sum();
        assert!((obj - ll).abs() < 1e-10 * ll.abs());
        let mut big = model.clone();
        big.mu.u = DVector::from_element(5, 1e3);
        let values = LatentValues::new(&bm, &bp, &big.mu.u, &big.phi.u);
        assert!(em_objective(&p, &bm, &bp, &big, &values) < obj);
    }

    #[test]
    fn trace_is_monotone_with_frozen_hyperparameters() {
        let (data, _) = toy_problem();
        let cfg = FitConfig { s_mu: 5, s_phi: 4, hyper_refresh_every: 0, max_iter: 60, tol: 0.0, ..Default::default() };
        let (_, report) = fit_em(&data, &cfg).unwrap();
        for w in report.objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn empty_data_fixed_point() {
        let data = Dataset::new(vec![EventSequence::empty(10.0).unwrap()], 10.0, 2.0).unwrap();
        let cfg = FitConfig { s_mu: 4, s_phi: 4, max_iter: 50, ..Default::default() };
        let (model, report) = fit_em(&data, &cfg).unwrap();
        assert!(report.objective.iter().all(|v| v.is_finite()));
        assert_eq!(model.phi.u, DVector::zeros(4));
        assert_eq!(model.phi.lambda_star, 0.5);
        // With nothing observed the baseline only loses mass to the latent process.
        assert!(model.mu.lambda_star > 0.0 && model.mu.lambda_star <= 0.1);
    }
}
