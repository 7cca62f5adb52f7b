//! Rate functions backed by a fitted sparse GP, usable anywhere a [`RateFn`]
//! is expected (likelihood, rescaling, simulation).

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::hawkes::RateFn;
use crate::kernel::{gram, kernel_vector, InducingGrid, KernelHyperparams};
use crate::pg::sigmoid;
use crate::quadrature::{GaussHermite, GaussLegendre};

/// Cells used when tabulating a cumulative integral over the domain.
const TABLE_CELLS: usize = 1024;
const CELL_ORDER: usize = 8;

/// `∫₀ˣ f` tabulated at cell boundaries, completed inside a cell with a
/// low-order Gauss–Legendre rule.
#[derive(Clone)]
pub struct CumulativeTable {
    step: f64,
    values: Vec<f64>,
    rule: GaussLegendre,
}

impl fmt::Debug for CumulativeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CumulativeTable")
            .field("step", &self.step)
            .field("cells", &(self.values.len() - 1))
            .finish()
    }
}

impl CumulativeTable {
    pub fn build<F: Fn(f64) -> f64>(domain: f64, f: F) -> Self {
        let rule = GaussLegendre::new(CELL_ORDER).expect("fixed rule order");
        let step = domain / TABLE_CELLS as f64;
        let mut values = Vec::with_capacity(TABLE_CELLS + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for k in 0..TABLE_CELLS {
            acc += rule.integrate_on(k as f64 * step, (k + 1) as f64 * step, &f);
            values.push(acc);
        }
        Self { step, values, rule }
    }

    pub fn at<F: Fn(f64) -> f64>(&self, x: f64, f: F) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let cells = self.values.len() - 1;
        let k = ((x / self.step).floor() as usize).min(cells);
        let base = self.values[k];
        let lo = k as f64 * self.step;
        if x <= lo {
            return base;
        }
        // Beyond the tabulated domain, walk further in cell-sized pieces.
        let mut acc = base;
        let mut a = lo;
        while a < x {
            let b = (a + self.step).min(x);
            acc += self.rule.integrate_on(a, b, &f);
            a = b;
        }
        acc
    }
}

/// `f(x) = k(x)ᵀK⁻¹u` and, when a covariance is attached, the marginal
/// variance `k(x)ᵀK⁻¹ΣK⁻¹k(x)`.
#[derive(Debug, Clone)]
pub struct LatentProjection {
    grid: InducingGrid,
    hp: KernelHyperparams,
    coef: DVector<f64>,
    cov_coef: Option<DMatrix<f64>>,
}

impl LatentProjection {
    pub fn new(
        grid: InducingGrid,
        hp: KernelHyperparams,
        mean: &DVector<f64>,
        cov: Option<&DMatrix<f64>>,
        jitter: f64,
    ) -> Result<Self> {
        let k = gram(&grid, &hp, jitter)?;
        let coef = k.solve(mean);
        let cov_coef = cov.map(|c| {
            let m = k.inverse() * c * k.inverse();
            (&m + m.transpose()) * 0.5
        });
        Ok(Self { grid, hp, coef, cov_coef })
    }

    pub fn mean(&self, x: f64) -> f64 {
        kernel_vector(x, &self.grid, &self.hp).dot(&self.coef)
    }

    pub fn mean_var(&self, x: f64) -> (f64, f64) {
        let k = kernel_vector(x, &self.grid, &self.hp);
        let m = k.dot(&self.coef);
        let v = match &self.cov_coef {
            Some(c) => k.dot(&(c * &k)).max(0.0),
            None => 0.0,
        };
        (m, v)
    }

    pub fn domain(&self) -> f64 {
        self.grid.domain()
    }
}

/// Point estimate `λ*·σ(f(x))`.
#[derive(Debug, Clone)]
pub struct SigmoidRate {
    lambda_star: f64,
    latent: LatentProjection,
    table: CumulativeTable,
}

impl SigmoidRate {
    pub fn new(lambda_star: f64, latent: LatentProjection) -> Self {
        let eval = |x: f64| lambda_star * sigmoid(latent.mean(x));
        let table = CumulativeTable::build(latent.domain(), eval);
        Self { lambda_star, latent, table }
    }
}

impl RateFn for SigmoidRate {
    fn eval(&self, x: f64) -> f64 {
        self.lambda_star * sigmoid(self.latent.mean(x))
    }
    fn sup_from(&self, _x: f64) -> f64 {
        self.lambda_star
    }
    fn cumulative(&self, x: f64) -> Option<f64> {
        Some(self.table.at(x, |t| self.eval(t)))
    }
}

/// Posterior mean `E[λ*]·E[σ(f(x))]` under a Gamma factor on `λ*` and a
/// Gaussian marginal on `f(x)`, with the matching standard deviation.
#[derive(Debug, Clone)]
pub struct PosteriorRate {
    alpha: f64,
    beta: f64,
    latent: LatentProjection,
    gh: GaussHermite,
    table: CumulativeTable,
}

impl PosteriorRate {
    pub fn new(alpha: f64, beta: f64, latent: LatentProjection, gh: GaussHermite) -> Self {
        let mut rate = Self {
            alpha,
            beta,
            latent,
            gh,
            table: CumulativeTable { step: 1.0, values: vec![0.0], rule: GaussLegendre::new(1).unwrap() },
        };
        rate.table = CumulativeTable::build(rate.latent.domain(), |x| rate.eval(x));
        rate
    }

    fn sigmoid_moments(&self, x: f64) -> (f64, f64) {
        let (m, v) = self.latent.mean_var(x);
        let s1 = self.gh.expect(m, v, sigmoid);
        let s2 = self.gh.expect(m, v, |z| sigmoid(z).powi(2));
        (s1, s2)
    }

    /// Pointwise posterior standard deviation of `λ*σ(f(x))`.
    pub fn std_dev(&self, x: f64) -> f64 {
        let (s1, s2) = self.sigmoid_moments(x);
        let e1 = self.alpha / self.beta;
        let e2 = self.alpha * (self.alpha + 1.0) / (self.beta * self.beta);
        (e2 * s2 - (e1 * s1).powi(2)).max(0.0).sqrt()
    }
}

impl RateFn for PosteriorRate {
    fn eval(&self, x: f64) -> f64 {
        let (m, v) = self.latent.mean_var(x);
        self.alpha / self.beta * self.gh.expect(m, v, sigmoid)
    }
    fn sup_from(&self, _x: f64) -> f64 {
        self.alpha / self.beta
    }
    fn cumulative(&self, x: f64) -> Option<f64> {
        Some(self.table.at(x, |t| self.eval(t)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_matches_closed_form() {
        let f = |x: f64| 1.0 + (0.3 * x).sin();
        let exact = |x: f64| x + (1.0 - (0.3 * x).cos()) / 0.3;
        let t = CumulativeTable::build(20.0, f);
        for x in [0.0, 0.013, 3.7, 19.99, 20.0, 23.5] {
            assert!((t.at(x, f) - exact(x)).abs() < 1e-11, "x = {x}");
        }
    }

    #[test]
    fn zero_mean_projection_gives_half_rate() {
        let grid = InducingGrid::uniform(5, 10.0).unwrap();
        let hp = KernelHyperparams::new(1.0, 0.5).unwrap();
        let latent = LatentProjection::new(grid, hp, &DVector::zeros(5), None, 1e-6).unwrap();
        let r = SigmoidRate::new(3.0, latent);
        assert_eq!(r.eval(4.2), 1.5);
        assert!((r.cumulative(10.0).unwrap() - 15.0).abs() < 1e-10);
    }

    #[test]
    fn posterior_rate_without_variance_is_point_estimate() {
        let grid = InducingGrid::uniform(4, 6.0).unwrap();
        let hp = KernelHyperparams::new(2.0, 0.8).unwrap();
        let u = DVector::from_vec(vec![0.5, -1.0, 1.2, -0.3]);
        let zero = DMatrix::zeros(4, 4);
        let a = LatentProjection::new(grid.clone(), hp, &u, Some(&zero), 1e-6).unwrap();
        let b = LatentProjection::new(grid, hp, &u, None, 1e-6).unwrap();
        let post = PosteriorRate::new(6.0, 3.0, a, GaussHermite::new(20).unwrap());
        let point = SigmoidRate::new(2.0, b);
        for x in [0.1, 2.5, 5.9] {
            assert!((post.eval(x) - point.eval(x)).abs() < 1e-14);
        }
        // With no latent variance only the Gamma spread remains: sd = σ·√α/β.
        let s = point.eval(1.0) / 2.0;
        assert!((post.std_dev(1.0) - s * 6f64.sqrt() / 3.0).abs() < 1e-12);
    }
}
