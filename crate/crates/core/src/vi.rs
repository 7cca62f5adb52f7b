//! Mean-field variational inference: Gaussian factors on the inducing
//! values, Gamma factors on the rate bounds, tilted Pólya-Gamma factors at
//! the observations, marked Poisson factors for the latent thinning points,
//! and a categorical factor per event over its possible parents.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::config::FitConfig;
use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::fitted::{LatentProjection, PosteriorRate};
use crate::hawkes::Rates;
use crate::kernel::{Features, InducingGrid, KernelHyperparams};
use crate::layout::{BranchingPosterior, PairIndex};
use crate::pg::{log_cosh, log_sigmoid, pg_mean};
use crate::quadrature::{GaussHermite, QuadratureGrid};
use crate::report::{FitReport, GridEstimates, HyperRecord};
use crate::sgp::{
    gaussian_update, precision_and_rhs, refresh_hyperparams, Basis, ComponentSpace, GaussianFactor, HyperUpdate,
    Problem, QuadraticStats, RefreshInput,
};

const LN_2: f64 = std::f64::consts::LN_2;

/// `Gamma(α, β)` in the shape–rate parametrization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFactor {
    pub alpha: f64,
    pub beta: f64,
}

impl GammaFactor {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(invalid(format!("Gamma factor needs α, β > 0, got ({alpha}, {beta})")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / self.beta
    }

    pub fn second_moment(&self) -> f64 {
        self.alpha * (self.alpha + 1.0) / (self.beta * self.beta)
    }

    /// `E[log λ] = ψ(α) − log β`.
    pub fn mean_log(&self) -> f64 {
        digamma(self.alpha) - self.beta.ln()
    }

    /// `exp E[log λ]`, the rate scale used inside the other factor updates.
    pub fn geometric_mean(&self) -> f64 {
        self.mean_log().exp()
    }

    pub fn entropy(&self) -> f64 {
        self.alpha - self.beta.ln() + ln_gamma(self.alpha) + (1.0 - self.alpha) * digamma(self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViComponent {
    pub grid: InducingGrid,
    pub hp: KernelHyperparams,
    pub q_u: GaussianFactor,
    pub q_lambda: GammaFactor,
}

impl ViComponent {
    pub fn rate(&self, relative_jitter: f64, gh: &GaussHermite) -> Result<PosteriorRate> {
        let latent = LatentProjection::new(
            self.grid.clone(),
            self.hp,
            &self.q_u.mean,
            Some(&self.q_u.cov),
            relative_jitter * self.hp.theta0,
        )?;
        Ok(PosteriorRate::new(self.q_lambda.alpha, self.q_lambda.beta, latent, gh.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViModel {
    pub mu: ViComponent,
    pub phi: ViComponent,
    pub window: f64,
    pub support: f64,
    pub relative_jitter: f64,
    pub gh_order: usize,
}

impl ViModel {
    /// Posterior mean rate functions.
    pub fn posterior_rates(&self) -> Result<(PosteriorRate, PosteriorRate)> {
        let gh = GaussHermite::new(self.gh_order)?;
        Ok((self.mu.rate(self.relative_jitter, &gh)?, self.phi.rate(self.relative_jitter, &gh)?))
    }

    pub fn rates(&self) -> Result<Rates> {
        let (mu, phi) = self.posterior_rates()?;
        Rates::new(Arc::new(mu), Arc::new(phi), self.support)
    }

    /// Posterior means with one-standard-deviation bands on uniform grids.
    pub fn estimates(&self, points: usize) -> Result<GridEstimates> {
        let (mu, phi) = self.posterior_rates()?;
        let rates = Rates::new(Arc::new(mu.clone()), Arc::new(phi.clone()), self.support)?;
        let mut est = GridEstimates::from_rates(&rates, self.window, points);
        est.mu_sd = Some(est.t.iter().map(|&t| mu.std_dev(t)).collect());
        est.phi_sd = Some(est.tau.iter().map(|&t| phi.std_dev(t)).collect());
        Ok(est)
    }
}

/// Mean and variance of the projected latent function at a set of locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Marginals {
    /// Under `q`; with `point_mass` the variance is taken to be zero.
    pub fn new(features: &Features, q: &GaussianFactor, point_mass: bool) -> Self {
        let mean = features.project(&q.mean);
        let var = if point_mass { vec![0.0; mean.len()] } else { features.quadratic_form(&q.cov) };
        Self { mean, var }
    }

    /// `E[f²]`.
    pub fn second_moment(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.var).map(|(m, v)| m * m + v).collect()
    }
}

/// Tilts `c = √E[f²]` and the matching `E[ω]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PgTilts {
    pub tilt: Vec<f64>,
    pub omega: Vec<f64>,
}

pub fn vi_pg_update(m: &Marginals) -> PgTilts {
    let tilt: Vec<f64> = m.mean.par_iter().zip(&m.var).map(|(f, v)| (f * f + v).sqrt()).collect();
    let omega = tilt.par_iter().map(|&c| pg_mean(1.0, c)).collect();
    PgTilts { tilt, omega }
}

/// Optimal latent Poisson factor at the quadrature nodes: ω-marginal rate
/// `λ̃ σ(−c) e^{(c − f̄)/2}`, the same weighted by `E[ω]`, tilts, and the
/// integral of the rate over the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonFactor {
    pub tilt: Vec<f64>,
    pub rate: Vec<f64>,
    pub rate_omega: Vec<f64>,
    pub mass: f64,
}

pub fn vi_poisson_update(q_lambda: &GammaFactor, nodes: &Marginals, quad: &QuadratureGrid) -> PoissonFactor {
    let e_log = q_lambda.mean_log();
    let tilt: Vec<f64> = nodes.mean.iter().zip(&nodes.var).map(|(f, v)| (f * f + v).sqrt()).collect();
    // σ(−c)e^{(c−f̄)/2} = e^{−f̄/2} / (2 cosh(c/2)).
    let rate: Vec<f64> = nodes
        .mean
        .iter()
        .zip(&tilt)
        .map(|(&f, &c)| (e_log - 0.5 * f - LN_2 - log_cosh(0.5 * c)).exp())
        .collect();
    let rate_omega = rate.iter().zip(&tilt).map(|(r, &c)| r * pg_mean(1.0, c)).collect();
    let mass = quad.dot(&rate);
    PoissonFactor { tilt, rate, rate_omega, mass }
}

/// Smallest shape a Gamma factor is allowed to reach. Under the improper
/// `1/λ` prior a component that explains no events drifts towards `α = 0`.
pub const MIN_SHAPE: f64 = 1e-10;

/// `α = Σp + E·mass`, `β = E·D` for exposure `E` and domain length `D`.
pub fn vi_lambda_update(resp_sum: f64, exposure: f64, mass: f64, domain: f64) -> Result<GammaFactor> {
    GammaFactor::new((resp_sum + exposure * mass).max(MIN_SHAPE), exposure * domain)
}

/// Optimal Gaussian factor on the inducing values, with the statistics it
/// was solved from.
pub fn vi_gp_update(
    space: &ComponentSpace,
    basis: &Basis,
    resp: &[f64],
    pg: &PgTilts,
    poisson: &PoissonFactor,
) -> Result<(GaussianFactor, QuadraticStats)> {
    let stats = QuadraticStats::assemble(space, resp, &pg.omega, &poisson.rate, &poisson.rate_omega);
    let (p, r) = precision_and_rhs(basis, &stats);
    Ok((gaussian_update(&basis.gram, &p, &r)?, stats))
}

/// `E[log σ(f)]` for each Gaussian marginal.
pub fn expected_log_sigmoid(m: &Marginals, gh: &GaussHermite) -> Vec<f64> {
    m.mean.par_iter().zip(&m.var).map(|(&f, &v)| gh.expect(f, v, log_sigmoid)).collect()
}

/// Responsibilities proportional to `λ̃ exp E[log σ(·)]` for background and
/// each admissible parent.
pub fn vi_branching_update(
    pairs: &PairIndex,
    q_mu: &GammaFactor,
    events: &Marginals,
    q_phi: &GammaFactor,
    lags: &Marginals,
    gh: &GaussHermite,
) -> BranchingPosterior {
    let (lm, lp) = (q_mu.mean_log(), q_phi.mean_log());
    let bg: Vec<f64> = expected_log_sigmoid(events, gh).into_iter().map(|x| lm + x).collect();
    let tr: Vec<f64> = expected_log_sigmoid(lags, gh).into_iter().map(|x| lp + x).collect();
    BranchingPosterior::from_log_weights(pairs, &bg, &tr)
}

/// `−KL(N(m, Σ) ‖ N(0, K))`; a point mass contributes only `−½ mᵀK⁻¹m`.
fn neg_kl(basis: &Basis, q: &GaussianFactor, point_mass: bool) -> Result<f64> {
    let quad = 0.5 * q.mean.dot(&basis.gram.solve(&q.mean));
    if point_mass {
        return Ok(-quad);
    }
    let s = q.dim() as f64;
    let trace = (basis.gram.inverse() * &q.cov).trace();
    let chol = crate::kernel::factor_spd(&q.cov)
        .map_err(|pivot| Error::SingularSystem(format!("posterior covariance (pivot {pivot:e})")))?;
    let log_det_cov = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (trace - s + basis.gram.log_det() - log_det_cov) - quad)
}

/// Expected augmented log-joint of one component minus the entropies of its
/// factors (the branching entropy is added once, outside).
#[allow(clippy::too_many_arguments)]
fn component_bound(
    space: &ComponentSpace,
    basis: &Basis,
    comp: &ViComponent,
    resp: &[f64],
    pg: &PgTilts,
    poisson: &PoissonFactor,
    obs: &Marginals,
    nodes: &Marginals,
    point_mass: bool,
) -> Result<f64> {
    let q = &comp.q_lambda;
    let e_log = q.mean_log();
    let obs_s = obs.second_moment();
    let events: f64 = (0..resp.len())
        .map(|o| {
            let (c, w) = (pg.tilt[o], pg.omega[o]);
            resp[o] * (e_log + 0.5 * obs.mean[o] - 0.5 * obs_s[o] * w - LN_2 + 0.5 * c * c * w - log_cosh(0.5 * c))
        })
        .sum();
    let node_s = nodes.second_moment();
    let latent: f64 = (0..poisson.rate.len())
        .map(|k| {
            let rho = poisson.rate[k];
            if rho <= 0.0 {
                return 0.0;
            }
            let c = poisson.tilt[k];
            let w = pg_mean(1.0, c);
            let inner = -0.5 * nodes.mean[k] - LN_2 - rho.ln() - log_cosh(0.5 * c)
                + e_log
                + 1.0
                + 0.5 * (c * c - node_s[k]) * w;
            space.quad.weights[k] * rho * inner
        })
        .sum::<f64>()
        * space.exposure
        - space.exposure * space.domain() * q.mean();
    // −E[log λ] + H[q(λ)], with the ±ψ(α) terms cancelled by hand.
    let lambda = q.alpha - q.alpha * digamma(q.alpha) + ln_gamma(q.alpha);
    Ok(events + latent + lambda + neg_kl(basis, &comp.q_u, point_mass)?)
}

/// Everything a mean-field iteration produced, for monitoring and refresh.
#[derive(Debug, Clone)]
pub struct ViStep {
    pub elbo: f64,
    pub pg_mu: PgTilts,
    pub pg_phi: PgTilts,
    pub poisson_mu: PoissonFactor,
    pub poisson_phi: PoissonFactor,
    pub stats_mu: QuadraticStats,
    pub stats_phi: Option<QuadraticStats>,
}

pub struct ViEngine<'a> {
    problem: &'a Problem,
    basis_mu: Basis,
    basis_phi: Basis,
    model: ViModel,
    branching: BranchingPosterior,
    gh: GaussHermite,
    point_mass: bool,
    /// Marginals at events and pair lags under the current Gaussian factors.
    obs: (Marginals, Marginals),
}

impl<'a> ViEngine<'a> {
    /// Start from `q(u) = N(0, K)` (or a point mass at zero), Gamma factors
    /// with the given means, and the branching they imply.
    pub fn new(
        problem: &'a Problem,
        hp_mu: KernelHyperparams,
        hp_phi: KernelHyperparams,
        lambda_mu: f64,
        lambda_phi: f64,
        gh_order: usize,
        point_mass: bool,
    ) -> Result<Self> {
        let basis_mu = problem.basis_mu(hp_mu)?;
        let basis_phi = problem.basis_phi(hp_phi)?;
        let prior = |b: &Basis| {
            if point_mass {
                GaussianFactor { mean: DVector::zeros(b.dim()), cov: DMatrix::zeros(b.dim(), b.dim()) }
            } else {
                GaussianFactor::prior(&b.gram)
            }
        };
        let beta_mu = problem.mu.exposure * problem.mu.domain();
        let beta_phi = problem.phi.exposure.max(1.0) * problem.phi.domain();
        let model = ViModel {
            mu: ViComponent {
                grid: problem.mu.grid.clone(),
                hp: hp_mu,
                q_u: prior(&basis_mu),
                q_lambda: GammaFactor::new(lambda_mu * beta_mu, beta_mu)?,
            },
            phi: ViComponent {
                grid: problem.phi.grid.clone(),
                hp: hp_phi,
                q_u: prior(&basis_phi),
                q_lambda: GammaFactor::new(lambda_phi * beta_phi, beta_phi)?,
            },
            window: problem.mu.domain(),
            support: problem.phi.domain(),
            relative_jitter: problem.relative_jitter,
            gh_order,
        };
        let gh = GaussHermite::new(gh_order)?;
        let mut engine = Self {
            problem,
            basis_mu,
            basis_phi,
            model,
            branching: BranchingPosterior { background: vec![], parent: vec![] },
            gh,
            point_mass,
            obs: (Marginals { mean: vec![], var: vec![] }, Marginals { mean: vec![], var: vec![] }),
        };
        engine.obs = engine.obs_marginals();
        engine.branching = engine.branching_update();
        Ok(engine)
    }

    pub fn model(&self) -> &ViModel {
        &self.model
    }

    pub fn branching(&self) -> &BranchingPosterior {
        &self.branching
    }

    pub fn bases(&self) -> (&Basis, &Basis) {
        (&self.basis_mu, &self.basis_phi)
    }

    fn obs_marginals(&self) -> (Marginals, Marginals) {
        (
            Marginals::new(&self.basis_mu.obs, &self.model.mu.q_u, self.point_mass),
            Marginals::new(&self.basis_phi.obs, &self.model.phi.q_u, self.point_mass),
        )
    }

    fn node_marginals(&self) -> (Marginals, Marginals) {
        (
            Marginals::new(&self.basis_mu.nodes, &self.model.mu.q_u, self.point_mass),
            Marginals::new(&self.basis_phi.nodes, &self.model.phi.q_u, self.point_mass),
        )
    }

    pub fn branching_update(&self) -> BranchingPosterior {
        vi_branching_update(
            &self.problem.layout.pairs,
            &self.model.mu.q_lambda,
            &self.obs.0,
            &self.model.phi.q_lambda,
            &self.obs.1,
            &self.gh,
        )
    }

    fn store_cov(&self, q: GaussianFactor) -> GaussianFactor {
        if self.point_mass {
            let d = q.dim();
            GaussianFactor { mean: q.mean, cov: DMatrix::zeros(d, d) }
        } else {
            q
        }
    }

    /// One pass of all factor updates in order: PG, Poisson, Gamma, Gaussian,
    /// branching.
    pub fn step(&mut self) -> Result<ViStep> {
        let p = self.problem;
        let has_events = p.n_events() > 0;
        let pg_mu = vi_pg_update(&self.obs.0);
        let pg_phi = vi_pg_update(&self.obs.1);
        let (nm, np) = self.node_marginals();
        let poisson_mu = vi_poisson_update(&self.model.mu.q_lambda, &nm, &p.mu.quad);
        let poisson_phi = vi_poisson_update(&self.model.phi.q_lambda, &np, &p.phi.quad);
        self.model.mu.q_lambda = vi_lambda_update(
            self.branching.expected_background(),
            p.mu.exposure,
            poisson_mu.mass,
            p.mu.domain(),
        )?;
        if has_events {
            self.model.phi.q_lambda = vi_lambda_update(
                self.branching.expected_triggered(),
                p.phi.exposure,
                poisson_phi.mass,
                p.phi.domain(),
            )?;
        }
        let (q, stats_mu) = vi_gp_update(&p.mu, &self.basis_mu, &self.branching.background, &pg_mu, &poisson_mu)?;
        self.model.mu.q_u = self.store_cov(q);
        let stats_phi = if has_events {
            let (q, s) = vi_gp_update(&p.phi, &self.basis_phi, &self.branching.parent, &pg_phi, &poisson_phi)?;
            self.model.phi.q_u = self.store_cov(q);
            Some(s)
        } else {
            None
        };
        self.obs = self.obs_marginals();
        self.branching = self.branching_update();
        let mut step = ViStep { elbo: 0.0, pg_mu, pg_phi, poisson_mu, poisson_phi, stats_mu, stats_phi };
        step.elbo = self.elbo(&step)?;
        Ok(step)
    }

    /// Convergence monitor for the current factors, with the PG and Poisson
    /// factors of `step`.
    pub fn elbo(&self, step: &ViStep) -> Result<f64> {
        let p = self.problem;
        let (ev, lag) = &self.obs;
        let (nm, np) = self.node_marginals();
        let mu = component_bound(
            &p.mu,
            &self.basis_mu,
            &self.model.mu,
            &self.branching.background,
            &step.pg_mu,
            &step.poisson_mu,
            ev,
            &nm,
            self.point_mass,
        )?;
        let phi = if p.n_events() > 0 {
            component_bound(
                &p.phi,
                &self.basis_phi,
                &self.model.phi,
                &self.branching.parent,
                &step.pg_phi,
                &step.poisson_phi,
                lag,
                &np,
                self.point_mass,
            )?
        } else {
            0.0
        };
        let value = mu + phi + self.branching.entropy();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite { location: "variational bound".into(), value })
        }
    }

    /// Hyperparameter search on the statistics of `step`, then the Gaussian
    /// factors and branching are re-solved under the new kernels.
    pub fn refresh(&mut self, step: &mut ViStep) -> Result<(HyperUpdate, Option<HyperUpdate>)> {
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
        let mut changed = false;
        if up_mu.hp != self.model.mu.hp {
            self.basis_mu = p.basis_mu(up_mu.hp)?;
            let (pm, r) = precision_and_rhs(&self.basis_mu, &step.stats_mu);
            let q = gaussian_update(&self.basis_mu.gram, &pm, &r)?;
            self.model.mu.q_u = self.store_cov(q);
            self.model.mu.hp = up_mu.hp;
            changed = true;
        }
        if let (Some(up), Some(stats)) = (&up_phi, &step.stats_phi) {
            if up.hp != self.model.phi.hp {
                self.basis_phi = p.basis_phi(up.hp)?;
                let (pm, r) = precision_and_rhs(&self.basis_phi, stats);
                let q = gaussian_update(&self.basis_phi.gram, &pm, &r)?;
                self.model.phi.q_u = self.store_cov(q);
                self.model.phi.hp = up.hp;
                changed = true;
            }
        }
        if changed {
            self.obs = self.obs_marginals();
            self.branching = self.branching_update();
            step.elbo = self.elbo(step)?;
        }
        Ok((up_mu, up_phi))
    }
}

/// Run mean-field coordinate ascent to convergence on a dataset.
pub fn fit_vi(data: &Dataset, config: &FitConfig) -> Result<(ViModel, FitReport)> {
    config.validate()?;
    let start = Instant::now();
    let problem = Problem::new(data, config.shape())?;
    let (hp_mu, hp_phi) = config.initial_hyperparams(&problem.mu.grid, &problem.phi.grid)?;
    let init = crate::em::initial_model(&problem, hp_mu, hp_phi);
    let mut engine = ViEngine::new(
        &problem,
        hp_mu,
        hp_phi,
        init.mu.lambda_star,
        init.phi.lambda_star,
        config.gh_order,
        config.fix_variance,
    )?;
    let mut report = FitReport { method: "vi".into(), ..Default::default() };
    let mut prev = f64::NAN;
    for it in 1..=config.max_iter {
        let mut step = engine.step()?;
        if config.hyper_refresh_every > 0 && it % config.hyper_refresh_every == 0 {
            let (up_mu, up_phi) = engine.refresh(&mut step)?;
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
        report.objective.push(step.elbo);
        report.iterations = it;
        if it > 1 && ((step.elbo - prev) / prev.abs()).abs() < config.tol {
            report.converged = true;
            break;
        }
        prev = step.elbo;
    }
    let model = engine.model().clone();
    report.estimates = model.estimates(config.eval_points)?;
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}
