//! Small dense optimizers: Nelder–Mead for the two-dimensional hyperparameter
//! search and a box-constrained BFGS for the parametric baseline.

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub initial_step: f64,
    pub max_evals: usize,
    /// Stop when the spread of simplex values drops below this (absolute,
    /// scaled by `1 + |best|`).
    pub f_tol: f64,
    /// ... and the simplex diameter below this.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { initial_step: 0.5, max_evals: 200, f_tol: 1e-10, x_tol: 1e-8 }
    }
}

/// Minimize `f` from `x0`. Non-finite values are treated as `+∞`, so
/// infeasible regions can be signalled that way.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> OptimResult {
    let n = x0.len();
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut evals = 0usize;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if best.is_finite() && (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) && diameter <= opts.x_tol {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect()
        };
        let xr = along(-1.0);
        let vr = eval(&xr, &mut evals);
        if vr < simplex[0].1 {
            let xe = along(-2.0);
            let ve = eval(&xe, &mut evals);
            simplex[n] = if ve < vr { (xe, ve) } else { (xr, vr) };
            continue;
        }
        if vr < simplex[n - 1].1 {
            simplex[n] = (xr, vr);
            continue;
        }
        let (xc, vc) = if vr < worst {
            let xc = along(-0.5);
            let vc = eval(&xc, &mut evals);
            (xc, vc)
        } else {
            let xc = along(0.5);
            let vc = eval(&xc, &mut evals);
            (xc, vc)
        };
        if vc < worst.min(vr) {
            simplex[n] = (xc, vc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best_x.iter().zip(&item.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
            let v = eval(&x, &mut evals);
            *item = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    OptimResult { x, value, evaluations: evals, converged }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence when the projected gradient's infinity norm falls below this.
    pub grad_tol: f64,
    /// ... or when the relative decrease of the objective falls below this.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-8, f_tol: 1e-14 }
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Components of the gradient that can still move inside the box.
fn free_mask(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<bool> {
    (0..x.len())
        .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
        .collect()
}

/// Box-constrained quasi-Newton minimization. `fg` returns the value and
/// gradient, or `None` when the point is infeasible; the line search backs
/// off from such points.
pub fn bfgs_box<F>(mut fg: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &BfgsOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut evals = 1usize;
    let Some((mut fx, mut g)) = fg(&x) else {
        return OptimResult { x, value: f64::INFINITY, evaluations: evals, converged: false };
    };
    let identity = |n: usize| {
        let mut h = vec![vec![0.0; n]; n];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        h
    };
    let mut h = identity(n);
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let free = free_mask(&x, &g, lower, upper);
        let pg_norm = g
            .iter()
            .zip(&free)
            .map(|(gi, &f)| if f { gi.abs() } else { 0.0 })
            .fold(0.0, f64::max);
        if pg_norm < opts.grad_tol {
            converged = true;
            break;
        }
        let mut d = vec![0.0; n];
        for i in 0..n {
            if !free[i] {
                continue;
            }
            for j in 0..n {
                if free[j] {
                    d[i] -= h[i][j] * g[j];
                }
            }
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(n);
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            project(&mut xn, lower, upper);
            evals += 1;
            if let Some((fn_, gn)) = fg(&xn) {
                let moved: f64 = xn.iter().zip(&x).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
                if fn_.is_finite() && fn_ <= fx + 1e-4 * moved.min(0.0) {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rel = (fx - fn_).abs() / fx.abs().max(1.0);
        x = xn;
        let f_prev = fx;
        fx = fn_;
        g = gn;
        if sy > 1e-12 * s.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt() {
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        if rel < opts.f_tol && f_prev >= fx {
            converged = true;
            break;
        }
    }
    OptimResult { x, value: fx, evaluations: evals, converged }
}
