//! Gauss–Legendre rules on intervals and Gauss–Hermite expectations under
//! univariate Gaussians.
//!
//! Nodes come from Newton iteration on the three-term recurrences, which is
//! accurate to machine precision for the orders used here (n <= a few hundred).

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Gauss–Legendre rule on the reference interval `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("Gauss-Legendre order must be at least 1"));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        for i in 0..m {
            let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..NEWTON_MAX_ITER {
                let (p, d) = legendre_with_derivative(n, z);
                dp = d;
                let step = p / d;
                z -= step;
                if step.abs() < NEWTON_TOL {
                    let (_, d) = legendre_with_derivative(n, z);
                    dp = d;
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Affine map of the rule onto `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> Result<QuadratureGrid> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(invalid(format!("invalid quadrature interval [{a}, {b}]")));
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Ok(QuadratureGrid {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| half * w).collect(),
            a,
            b,
        })
    }

    /// `∫_a^b f` without materializing a grid. Zero-length intervals give 0.
    pub fn integrate_on<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        if b <= a {
            return 0.0;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
    }
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
    }
    let dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
    (p1, dp)
}

/// Nodes and weights of a rule mapped onto `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ wᵢ f(xᵢ)`; a non-finite integrand value is reported with its node index.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (i, (&x, &w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("quadrature node {i} (x = {x})"),
                    value: v,
                });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Weighted sum of precomputed integrand values at the nodes.
    pub fn dot(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.weights.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Standard Gauss–Legendre grid of order `n` on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<QuadratureGrid> {
    GaussLegendre::new(n)?.on_interval(a, b)
}

/// Gauss–Hermite rule for the weight `e^{-x²}`, used to take expectations
/// under `N(mean, var)` via the substitution `mean + sqrt(2 var) x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    /// Weights already divided by `sqrt(π)`, so they sum to one.
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("Gauss-Hermite order must be at least 1"));
        }
        const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
        let nf = n as f64;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..NEWTON_MAX_ITER {
                let (p1, p2) = hermite_normalized(n, z, PIM4);
                pp = (2.0 * nf).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= NEWTON_TOL * z.abs().max(1.0) {
                    let (_, p2) = hermite_normalized(n, z, PIM4);
                    pp = (2.0 * nf).sqrt() * p2;
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            let w = 2.0 / (pp * pp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let norm = PI.sqrt();
        for w in &mut weights {
            *w /= norm;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E[g(X)]` for `X ~ N(mean, var)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, mean: f64, var: f64, g: F) -> f64 {
        if var <= 0.0 {
            return g(mean);
        }
        let scale = (2.0 * var).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * g(mean + scale * x))
            .sum()
    }
}

fn hermite_normalized(n: usize, z: f64, p0: f64) -> (f64, f64) {
    let mut p1 = p0;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}
