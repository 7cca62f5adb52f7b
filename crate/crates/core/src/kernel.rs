//! Squared-exponential kernel, inducing grids and the projected ("sparse")
//! posterior-mean function `f(t) = k(t)ᵀ K⁻¹ u`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default diagonal jitter, relative to the output variance.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-6;

/// `(θ₀, θ₁)`: output variance and inverse squared length-scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub theta0: f64,
    pub theta1: f64,
}

impl KernelHyperparams {
    pub fn new(theta0: f64, theta1: f64) -> Result<Self> {
        let hp = Self { theta0, theta1 };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta0 > 0.0 && self.theta0.is_finite()) {
            return Err(invalid(format!("theta0 must be positive, got {}", self.theta0)));
        }
        if !(self.theta1 > 0.0 && self.theta1.is_finite()) {
            return Err(invalid(format!("theta1 must be positive, got {}", self.theta1)));
        }
        Ok(())
    }
}

/// `θ₀ exp(-θ₁/2 (x - y)²)`.
#[inline]
pub fn se_kernel(x: f64, y: f64, hp: &KernelHyperparams) -> f64 {
    let d = x - y;
    hp.theta0 * (-0.5 * hp.theta1 * d * d).exp()
}

/// Strictly increasing inducing locations on `[0, domain]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingGrid {
    points: Vec<f64>,
    domain: f64,
}

impl InducingGrid {
    pub fn new(points: Vec<f64>, domain: f64) -> Result<Self> {
        if !(domain > 0.0 && domain.is_finite()) {
            return Err(invalid(format!("grid domain must be positive, got {domain}")));
        }
        if points.is_empty() {
            return Err(invalid("inducing grid needs at least one point"));
        }
        if points.iter().any(|&p| !(0.0..=domain).contains(&p)) {
            return Err(invalid(format!("inducing points must lie in [0, {domain}]")));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("inducing points must be strictly increasing"));
        }
        Ok(Self { points, domain })
    }

    /// `count` equally spaced points including both ends of `[0, domain]`.
    pub fn uniform(count: usize, domain: f64) -> Result<Self> {
        if count < 2 {
            return Err(invalid(format!("need at least 2 inducing points, got {count}")));
        }
        let step = domain / (count - 1) as f64;
        let points = (0..count).map(|i| i as f64 * step).collect();
        Self::new(points, domain)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn domain(&self) -> f64 {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean spacing between neighbouring points.
    pub fn spacing(&self) -> f64 {
        let n = self.points.len();
        if n < 2 {
            return self.domain;
        }
        (self.points[n - 1] - self.points[0]) / (n - 1) as f64
    }
}

/// Jittered Gram matrix on an inducing grid together with its factorization.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    inverse: DMatrix<f64>,
}

impl GramMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn determinant(&self) -> f64 {
        self.chol.determinant()
    }
}

/// Cholesky factorization that reports the smallest pivot on failure.
pub(crate) fn factor_spd(m: &DMatrix<f64>) -> std::result::Result<Cholesky<f64, Dyn>, f64> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        min_pivot = min_pivot.min(d);
        if !(d > 0.0) || !d.is_finite() {
            return Err(d.min(min_pivot));
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Cholesky::new(m.clone()).ok_or(min_pivot)
}

/// Assemble and factorize `K + jitter·I` on `grid`.
pub fn gram(grid: &InducingGrid, hp: &KernelHyperparams, jitter: f64) -> Result<GramMatrix> {
    if !(jitter >= 0.0) {
        return Err(invalid(format!("jitter must be non-negative, got {jitter}")));
    }
    let pts = grid.points();
    let s = pts.len();
    let values = DMatrix::from_fn(s, s, |i, j| {
        se_kernel(pts[i], pts[j], hp) + if i == j { jitter } else { 0.0 }
    });
    let chol = factor_spd(&values).map_err(|pivot| Error::SingularKernel { pivot })?;
    let inverse = chol.inverse();
    Ok(GramMatrix { values, jitter, chol, inverse })
}

/// Kernel vector `k(t)` against the inducing points.
pub fn kernel_vector(t: f64, grid: &InducingGrid, hp: &KernelHyperparams) -> DVector<f64> {
    DVector::from_iterator(grid.len(), grid.points().iter().map(|&p| se_kernel(t, p, hp)))
}

/// Projected mean `k(t)ᵀ K⁻¹ u`.
pub fn sparse_mean(
    t: f64,
    grid: &InducingGrid,
    gram: &GramMatrix,
    u: &DVector<f64>,
    hp: &KernelHyperparams,
) -> f64 {
    debug_assert_eq!(u.len(), grid.len());
    let k = kernel_vector(t, grid, hp);
    k.dot(&gram.solve(u))
}

/// Row-major table of projection weights `a(x) = K⁻¹ k(x)` at a fixed set of
/// locations, so that `f(x) = a(x)·u` is a length-S dot product.
#[derive(Debug, Clone, Default)]
pub struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn compute(
        xs: &[f64],
        grid: &InducingGrid,
        hp: &KernelHyperparams,
        gram: &GramMatrix,
    ) -> Self {
        use rayon::prelude::*;
        let dim = grid.len();
        let pts = grid.points();
        let kinv = gram.inverse();
        let mut data = vec![0.0; xs.len() * dim];
        data.par_chunks_mut(dim * 256)
            .zip(xs.par_chunks(256))
            .for_each(|(out, chunk)| {
                let mut k = vec![0.0; dim];
                for (row, &x) in out.chunks_mut(dim).zip(chunk) {
                    for (kv, &p) in k.iter_mut().zip(pts) {
                        *kv = se_kernel(x, p, hp);
                    }
                    // K⁻¹ is symmetric, so row s of K⁻¹ dotted with k gives a_s.
                    for (s, a) in row.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (r, kv) in k.iter().enumerate() {
                            acc += kinv[(s, r)] * kv;
                        }
                        *a = acc;
                    }
                }
            });
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `a(xᵢ)·v` for every row.
    pub fn project(&self, v: &DVector<f64>) -> Vec<f64> {
        use rayon::prelude::*;
        let v = v.as_slice();
        self.data
            .par_chunks(self.dim.max(1))
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `a(xᵢ)ᵀ Σ a(xᵢ)` for every row.
    pub fn quadratic_form(&self, cov: &DMatrix<f64>) -> Vec<f64> {
        use rayon::prelude::*;
        let dim = self.dim;
        self.data
            .par_chunks(dim.max(1))
            .map(|row| {
                let mut acc = 0.0;
                for i in 0..dim {
                    let mut inner = 0.0;
                    for j in 0..dim {
                        inner += cov[(i, j)] * row[j];
                    }
                    acc += row[i] * inner;
                }
                acc.max(0.0)
            })
            .collect()
    }
}
