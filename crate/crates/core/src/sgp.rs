//! Pieces shared by the EM and mean-field engines: per-component geometry,
//! projection bases, the quadratic statistics that drive the Gaussian update
//! of the inducing values, and the marginal objective used to refresh kernel
//! hyperparameters.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::kernel::{factor_spd, gram, se_kernel, Features, GramMatrix, InducingGrid, KernelHyperparams};
use crate::layout::Layout;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::quadrature::{GaussLegendre, QuadratureGrid};

/// Rows per parallel work unit in reductions. Fixed so results do not depend
/// on the size of the thread pool.
pub(crate) const CHUNK: usize = 512;

/// Bounds on both kernel hyperparameters during refresh.
pub const HYPER_BOUNDS: (f64, f64) = (1e-3, 1e3);

/// Fixed geometry of one latent function: its inducing grid, the quadrature
/// nodes for its compensator integral, and how many copies of that integral
/// enter the likelihood.
#[derive(Debug, Clone)]
pub struct ComponentSpace {
    pub grid: InducingGrid,
    pub quad: QuadratureGrid,
    pub exposure: f64,
}

impl ComponentSpace {
    pub fn new(inducing: usize, domain: f64, quad_order: usize, exposure: f64) -> Result<Self> {
        Ok(Self {
            grid: InducingGrid::uniform(inducing, domain)?,
            quad: GaussLegendre::new(quad_order)?.on_interval(0.0, domain)?,
            exposure,
        })
    }

    pub fn domain(&self) -> f64 {
        self.grid.domain()
    }
}

/// Everything about a dataset that stays fixed during a fit.
#[derive(Debug, Clone)]
pub struct Problem {
    pub layout: Layout,
    /// Baseline: domain `[0, T]`, one integral per sequence.
    pub mu: ComponentSpace,
    /// Trigger: domain `[0, T_φ]`, one integral per event.
    pub phi: ComponentSpace,
    pub relative_jitter: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ProblemShape {
    pub inducing_mu: usize,
    pub inducing_phi: usize,
    pub quad_order_mu: usize,
    pub quad_order_phi: usize,
    pub relative_jitter: f64,
}

impl Problem {
    pub fn new(data: &Dataset, shape: ProblemShape) -> Result<Self> {
        if data.sequences().is_empty() {
            return Err(invalid("dataset has no sequences"));
        }
        let layout = Layout::new(data);
        let mu = ComponentSpace::new(
            shape.inducing_mu,
            data.window(),
            shape.quad_order_mu,
            layout.n_sequences as f64,
        )?;
        let phi = ComponentSpace::new(
            shape.inducing_phi,
            data.support(),
            shape.quad_order_phi,
            layout.n_events() as f64,
        )?;
        Ok(Self { layout, mu, phi, relative_jitter: shape.relative_jitter })
    }

    pub fn basis_mu(&self, hp: KernelHyperparams) -> Result<Basis> {
        Basis::new(&self.mu, hp, &self.layout.times, self.relative_jitter)
    }

    pub fn basis_phi(&self, hp: KernelHyperparams) -> Result<Basis> {
        Basis::new(&self.phi, hp, self.layout.pairs.lags(), self.relative_jitter)
    }

    pub fn n_events(&self) -> usize {
        self.layout.n_events()
    }
}

/// Projection weights `K⁻¹k(x)` for one choice of hyperparameters, at the
/// observed locations (event times or pair lags) and at the quadrature nodes.
#[derive(Debug, Clone)]
pub struct Basis {
    pub hp: KernelHyperparams,
    pub gram: GramMatrix,
    pub obs: Features,
    pub nodes: Features,
}

impl Basis {
    pub fn new(
        space: &ComponentSpace,
        hp: KernelHyperparams,
        obs_points: &[f64],
        relative_jitter: f64,
    ) -> Result<Self> {
        hp.validate()?;
        let gram = gram(&space.grid, &hp, relative_jitter * hp.theta0)?;
        let obs = Features::compute(obs_points, &space.grid, &hp, &gram);
        let nodes = Features::compute(&space.quad.nodes, &space.grid, &hp, &gram);
        Ok(Self { hp, gram, obs, nodes })
    }

    pub fn dim(&self) -> usize {
        self.gram.dim()
    }
}

/// Coefficients of the quadratic surrogate `Σ (-½ A f² + B f)` in the latent
/// function: one `(A, B)` per observed location and one per quadrature node,
/// the latter already multiplied by node weight and exposure.
#[derive(Debug, Clone, Default)]
pub struct QuadraticStats {
    pub obs_a: Vec<f64>,
    pub obs_b: Vec<f64>,
    pub node_a: Vec<f64>,
    pub node_b: Vec<f64>,
}

impl QuadraticStats {
    /// Statistics for responsibilities `p`, PG means `ω` at the observations,
    /// and latent rates (`rate`, `rate·E[ω]`) at the quadrature nodes.
    pub fn assemble(
        space: &ComponentSpace,
        resp: &[f64],
        omega: &[f64],
        rate: &[f64],
        rate_omega: &[f64],
    ) -> Self {
        let e = space.exposure;
        let w = &space.quad.weights;
        Self {
            obs_a: resp.iter().zip(omega).map(|(p, o)| p * o).collect(),
            obs_b: resp.iter().map(|p| 0.5 * p).collect(),
            node_a: w.iter().zip(rate_omega).map(|(w, r)| w * e * r).collect(),
            node_b: w.iter().zip(rate).map(|(w, r)| -0.5 * w * e * r).collect(),
        }
    }
}

/// `Σ c·x xᵀ` and `Σ d·x` over the rows `x` of a feature table.
fn weighted_moments(features: &Features, a: &[f64], b: &[f64], dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let rows = features.len();
    debug_assert_eq!(rows, a.len());
    let starts: Vec<usize> = (0..rows).step_by(CHUNK).collect();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let mut m = vec![0.0; dim * dim];
            let mut v = vec![0.0; dim];
            for i in s..(s + CHUNK).min(rows) {
                let x = features.row(i);
                let (ai, bi) = (a[i], b[i]);
                for r in 0..dim {
                    v[r] += bi * x[r];
                    let ax = ai * x[r];
                    for c in r..dim {
                        m[r * dim + c] += ax * x[c];
                    }
                }
            }
            (m, v)
        })
        .collect();
    let mut mat = DMatrix::zeros(dim, dim);
    let mut vec = DVector::zeros(dim);
    for (m, v) in partials {
        for r in 0..dim {
            vec[r] += v[r];
            for c in r..dim {
                mat[(r, c)] += m[r * dim + c];
            }
        }
    }
    for r in 0..dim {
        for c in 0..r {
            mat[(r, c)] = mat[(c, r)];
        }
    }
    (mat, vec)
}

/// Precision contribution `P = Σ A a aᵀ` and right-hand side `r = Σ B a`
/// where `a = K⁻¹k` are the projection weights.
pub fn precision_and_rhs(basis: &Basis, stats: &QuadraticStats) -> (DMatrix<f64>, DVector<f64>) {
    let dim = basis.dim();
    let (p_obs, r_obs) = weighted_moments(&basis.obs, &stats.obs_a, &stats.obs_b, dim);
    let (p_nodes, r_nodes) = weighted_moments(&basis.nodes, &stats.node_a, &stats.node_b, dim);
    (p_obs + p_nodes, r_obs + r_nodes)
}

/// Gaussian factor over inducing values.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianFactor {
    pub fn prior(gram: &GramMatrix) -> Self {
        Self { mean: DVector::zeros(gram.dim()), cov: gram.values().clone() }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `Σ = (P + K⁻¹)⁻¹`, `m = Σ r`.
pub fn gaussian_update(gram: &GramMatrix, precision: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<GaussianFactor> {
    let mut m = precision + gram.inverse();
    m = (&m + m.transpose()) * 0.5;
    let chol = factor_spd(&m).map_err(|pivot| {
        Error::SingularSystem(format!(
            "posterior precision not positive definite (pivot {pivot:e}, K jitter {:e})",
            gram.jitter()
        ))
    })?;
    let mean = chol.solve(rhs);
    let mut cov = chol.inverse();
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianFactor { mean, cov })
}

/// Observation and node statistics bundled with the locations they refer to,
/// which is all the hyperparameter search needs.
pub struct RefreshInput<'a> {
    pub space: &'a ComponentSpace,
    pub obs_points: &'a [f64],
    pub stats: &'a QuadraticStats,
    pub relative_jitter: f64,
}

/// `Σ c·k kᵀ` and `Σ d·k` with raw kernel vectors `k(x)`.
fn kernel_moments(
    points: &[f64],
    a: &[f64],
    b: &[f64],
    grid: &InducingGrid,
    hp: &KernelHyperparams,
) -> (DMatrix<f64>, DVector<f64>) {
    let dim = grid.len();
    let pts = grid.points();
    let starts: Vec<usize> = (0..points.len()).step_by(CHUNK).collect();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let mut m = vec![0.0; dim * dim];
            let mut v = vec![0.0; dim];
            let mut k = vec![0.0; dim];
            for i in s..(s + CHUNK).min(points.len()) {
                for (kv, &p) in k.iter_mut().zip(pts) {
                    *kv = se_kernel(points[i], p, hp);
                }
                for r in 0..dim {
                    v[r] += b[i] * k[r];
                    let ak = a[i] * k[r];
                    for c in r..dim {
                        m[r * dim + c] += ak * k[c];
                    }
                }
            }
            (m, v)
        })
        .collect();
    let mut mat = DMatrix::zeros(dim, dim);
    let mut vec = DVector::zeros(dim);
    for (m, v) in partials {
        for r in 0..dim {
            vec[r] += v[r];
            for c in r..dim {
                mat[(r, c)] += m[r * dim + c];
            }
        }
    }
    for r in 0..dim {
        for c in 0..r {
            mat[(r, c)] = mat[(c, r)];
        }
    }
    (mat, vec)
}

/// Log marginal of the conditionally Gaussian augmented model with the
/// inducing values integrated out:
/// `½ rᵀ(P + K⁻¹)⁻¹r − ½ log|K| − ½ log|P + K⁻¹|`.
/// With `G = Σ A k kᵀ` and `g = Σ B k` this is
/// `½ gᵀ(G + K)⁻¹g − ½ log|G + K| + ½ log|K|`, which needs no `K⁻¹`.
pub fn marginal_objective(input: &RefreshInput<'_>, hp: &KernelHyperparams) -> Result<f64> {
    hp.validate()?;
    let space = input.space;
    let k = gram(&space.grid, hp, input.relative_jitter * hp.theta0)?;
    let (g_obs, v_obs) = kernel_moments(
        input.obs_points,
        &input.stats.obs_a,
        &input.stats.obs_b,
        &space.grid,
        hp,
    );
    let (g_nodes, v_nodes) = kernel_moments(
        &space.quad.nodes,
        &input.stats.node_a,
        &input.stats.node_b,
        &space.grid,
        hp,
    );
    let g = g_obs + g_nodes;
    let v = v_obs + v_nodes;
    let mut outer = g + k.values();
    outer = (&outer + outer.transpose()) * 0.5;
    let chol = factor_spd(&outer)
        .map_err(|pivot| Error::SingularSystem(format!("G + K not positive definite (pivot {pivot:e})")))?;
    let quad = v.dot(&chol.solve(&v));
    let log_det_outer = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let value = 0.5 * quad - 0.5 * log_det_outer + 0.5 * k.log_det();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { location: "hyperparameter objective".into(), value })
    }
}

/// Outcome of one hyperparameter search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperUpdate {
    pub hp: KernelHyperparams,
    pub objective_before: f64,
    pub objective_after: f64,
    /// The search failed and the previous values were kept.
    pub failed: bool,
}

/// Observation counts above which the search runs on binned statistics.
const COMPRESS_BINS: usize = 2048;

/// Accumulate observation statistics onto the centres of a fine uniform
/// partition of the domain. Only used to steer the search.
fn compress(input: &RefreshInput<'_>) -> Option<(Vec<f64>, QuadraticStats)> {
    if input.obs_points.len() <= 4 * COMPRESS_BINS {
        return None;
    }
    let domain = input.space.domain();
    let width = domain / COMPRESS_BINS as f64;
    let mut a = vec![0.0; COMPRESS_BINS];
    let mut b = vec![0.0; COMPRESS_BINS];
    for ((&x, &ai), &bi) in input.obs_points.iter().zip(&input.stats.obs_a).zip(&input.stats.obs_b) {
        let k = ((x / width) as usize).min(COMPRESS_BINS - 1);
        a[k] += ai;
        b[k] += bi;
    }
    let mut points = Vec::new();
    let mut stats = QuadraticStats {
        node_a: input.stats.node_a.clone(),
        node_b: input.stats.node_b.clone(),
        ..Default::default()
    };
    for k in 0..COMPRESS_BINS {
        if a[k] != 0.0 || b[k] != 0.0 {
            points.push((k as f64 + 0.5) * width);
            stats.obs_a.push(a[k]);
            stats.obs_b.push(b[k]);
        }
    }
    Some((points, stats))
}

/// Bounded Nelder–Mead in log-space over `(θ₀, θ₁)`. Large observation sets
/// are searched on binned statistics; the winner is kept only if the exact
/// objective agrees that it improves on the starting point, so the objective
/// never decreases.
pub fn refresh_hyperparams(input: &RefreshInput<'_>, current: KernelHyperparams) -> HyperUpdate {
    let (lo, hi) = (HYPER_BOUNDS.0.ln(), HYPER_BOUNDS.1.ln());
    let to_hp = |x: &[f64]| KernelHyperparams {
        theta0: x[0].clamp(lo, hi).exp(),
        theta1: x[1].clamp(lo, hi).exp(),
    };
    let start_hp = to_hp(&[current.theta0.ln(), current.theta1.ln()]);
    let Ok(before) = marginal_objective(input, &start_hp) else {
        return HyperUpdate { hp: current, objective_before: f64::NAN, objective_after: f64::NAN, failed: true };
    };
    let compressed = compress(input);
    let search_input = match &compressed {
        Some((points, stats)) => RefreshInput {
            space: input.space,
            obs_points: points,
            stats,
            relative_jitter: input.relative_jitter,
        },
        None => RefreshInput { ..*input },
    };
    let neg = |x: &[f64]| match marginal_objective(&search_input, &to_hp(x)) {
        Ok(v) => -v,
        Err(_) => f64::INFINITY,
    };
    let start = [start_hp.theta0.ln(), start_hp.theta1.ln()];
    let opts = NelderMeadOptions { initial_step: 0.5, max_evals: 80, f_tol: 1e-7, x_tol: 1e-4 };
    let result = nelder_mead(neg, &start, &opts);
    let candidate = to_hp(&result.x);
    let after = if compressed.is_some() {
        marginal_objective(input, &candidate).unwrap_or(f64::NEG_INFINITY)
    } else {
        -result.value
    };
    if after.is_finite() && after > before {
        HyperUpdate { hp: candidate, objective_before: before, objective_after: after, failed: false }
    } else {
        HyperUpdate {
            hp: start_hp,
            objective_before: before,
            objective_after: before,
            failed: !result.value.is_finite(),
        }
    }
}
