//! Closed-form rate functions: the ground-truth shapes of the synthetic
//! scenarios and the exponential kernel of the parametric baseline.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{invalid, Result};
use crate::hawkes::RateFn;

/// `c` everywhere.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl RateFn for Constant {
    fn eval(&self, _x: f64) -> f64 {
        self.0
    }
    fn sup_from(&self, _x: f64) -> f64 {
        self.0
    }
    fn cumulative(&self, x: f64) -> Option<f64> {
        Some(self.0 * x)
    }
}

/// `α e^{-βτ}`.
#[derive(Debug, Clone, Copy)]
pub struct ExpDecay {
    pub alpha: f64,
    pub beta: f64,
}

impl RateFn for ExpDecay {
    fn eval(&self, x: f64) -> f64 {
        self.alpha * (-self.beta * x).exp()
    }
    fn sup_from(&self, x: f64) -> f64 {
        self.alpha * (-self.beta * x.max(0.0)).exp()
    }
    fn cumulative(&self, x: f64) -> Option<f64> {
        Some(self.alpha / self.beta * -(-self.beta * x).exp_m1())
    }
}

/// `scale · sin τ` on `(0, π]`, zero beyond.
#[derive(Debug, Clone, Copy)]
pub struct HalfSine {
    pub scale: f64,
}

impl RateFn for HalfSine {
    fn eval(&self, x: f64) -> f64 {
        if x > 0.0 && x <= PI {
            self.scale * x.sin()
        } else {
            0.0
        }
    }
    fn sup_from(&self, x: f64) -> f64 {
        if x <= FRAC_PI_2 {
            self.scale
        } else if x <= PI {
            self.scale * x.sin()
        } else {
            0.0
        }
    }
    fn cumulative(&self, x: f64) -> Option<f64> {
        let x = x.clamp(0.0, PI);
        Some(self.scale * (1.0 - x.cos()))
    }
}

/// `sin(2π t / period) + offset`.
#[derive(Debug, Clone, Copy)]
pub struct Sinusoid {
    pub period: f64,
    pub offset: f64,
}

impl RateFn for Sinusoid {
    fn eval(&self, x: f64) -> f64 {
        (2.0 * PI * x / self.period).sin() + self.offset
    }
    fn sup_from(&self, _x: f64) -> f64 {
        1.0 + self.offset
    }
    fn cumulative(&self, x: f64) -> Option<f64> {
        let w = 2.0 * PI / self.period;
        Some(self.offset * x + (1.0 - (w * x).cos()) / w)
    }
}

/// `scale · (sin(ωτ) + 1) · e^{-κτ}`.
#[derive(Debug, Clone, Copy)]
pub struct DampedSine {
    pub scale: f64,
    pub freq: f64,
    pub decay: f64,
}

impl RateFn for DampedSine {
    fn eval(&self, x: f64) -> f64 {
        self.scale * ((self.freq * x).sin() + 1.0) * (-self.decay * x).exp()
    }
    fn sup_from(&self, x: f64) -> f64 {
        2.0 * self.scale * (-self.decay * x.max(0.0)).exp()
    }
    fn cumulative(&self, x: f64) -> Option<f64> {
        let (w, k) = (self.freq, self.decay);
        let e = (-k * x).exp();
        let flat = (1.0 - e) / k;
        let wave = (w - e * (k * (w * x).sin() + w * (w * x).cos())) / (k * k + w * w);
        Some(self.scale * (flat + wave))
    }
}

/// Piecewise-linear interpolation through `(x, y)` knots, held flat beyond
/// the last knot and zero before the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    x: Vec<f64>,
    y: Vec<f64>,
    /// `∫` up to each knot.
    cum: Vec<f64>,
    /// `max y` over the knots from each index on.
    tail_max: Vec<f64>,
}

impl Tabulated {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(invalid("rate table needs equally many x and y values, at least one"));
        }
        if x.windows(2).any(|w| !(w[0] < w[1])) || x[0] < 0.0 {
            return Err(invalid("rate table x values must be non-negative and strictly increasing"));
        }
        if y.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("rate table y values must be finite and non-negative"));
        }
        let mut cum = vec![0.0; x.len()];
        for i in 1..x.len() {
            cum[i] = cum[i - 1] + 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
        }
        let mut tail_max = y.clone();
        for i in (0..y.len().saturating_sub(1)).rev() {
            tail_max[i] = tail_max[i].max(tail_max[i + 1]);
        }
        Ok(Self { x, y, cum, tail_max })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }

    /// Knot interval holding `v`: the largest `i` with `x[i] <= v`.
    fn cell(&self, v: f64) -> usize {
        self.x.partition_point(|&k| k <= v).saturating_sub(1)
    }
}

impl RateFn for Tabulated {
    fn eval(&self, v: f64) -> f64 {
        let n = self.x.len();
        if v < self.x[0] {
            return 0.0;
        }
        if v >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.cell(v);
        let t = (v - self.x[i]) / (self.x[i + 1] - self.x[i]);
        self.y[i] + t * (self.y[i + 1] - self.y[i])
    }
    fn sup_from(&self, v: f64) -> f64 {
        if v < self.x[0] {
            return self.tail_max[0];
        }
        let i = self.cell(v);
        self.eval(v).max(self.tail_max.get(i + 1).copied().unwrap_or(0.0))
    }
    fn cumulative(&self, v: f64) -> Option<f64> {
        let n = self.x.len();
        if v <= self.x[0] {
            return Some(0.0);
        }
        if v >= self.x[n - 1] {
            return Some(self.cum[n - 1] + self.y[n - 1] * (v - self.x[n - 1]));
        }
        let i = self.cell(v);
        Some(self.cum[i] + 0.5 * (self.y[i] + self.eval(v)) * (v - self.x[i]))
    }
}
