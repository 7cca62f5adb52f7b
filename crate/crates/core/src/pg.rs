//! Sigmoid link helpers and the first moment of the tilted Pólya-Gamma law.
//!
//! Inference only ever needs `E[ω]` under `PG(b, c)`, so no sampler lives here.

use std::f64::consts::LN_2;

/// Below this tilt the closed form is replaced by its Taylor expansion.
const SMALL_TILT: f64 = 1e-4;

/// Mean of the tilted Pólya-Gamma distribution `PG(b, c)`: `b/(2c) tanh(c/2)`.
///
/// Even in `c`; the `c -> 0` limit is `b/4`.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    debug_assert!(b > 0.0);
    let c = c.abs();
    if c < SMALL_TILT {
        b * (0.25 - c * c / 48.0)
    } else {
        b * (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Logistic function, saturating cleanly for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)` without cancellation or overflow.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// `log cosh(x)`, stable for large `|x|`.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// Exponent of the Gaussian representation of the sigmoid:
/// `h(ω, z) = z/2 - z²ω/2 - log 2`.
pub fn h_fn(omega: f64, z: f64) -> f64 {
    debug_assert!(omega >= 0.0);
    0.5 * z - 0.5 * z * z * omega - LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pg_mean_at_zero_tilt() {
        assert_eq!(pg_mean(1.0, 0.0), 0.25);
        assert!((pg_mean(1.0, 1e-8) - 0.25).abs() < 1e-8);
        assert!((pg_mean(2.0, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pg_mean_closed_form() {
        // tanh(1)/4 = 0.19039853898894116...
        assert!((pg_mean(1.0, 2.0) - 0.190_398_538_988_941_16).abs() < 1e-15);
        assert_eq!(pg_mean(1.0, -3.0), pg_mean(1.0, 3.0));
        assert!(pg_mean(1.0, 50.0) > 0.0);
    }

    #[test]
    fn small_tilt_branch_is_continuous() {
        let below = pg_mean(1.0, SMALL_TILT * 0.999_999);
        let above = pg_mean(1.0, SMALL_TILT * 1.000_001);
        assert!((below - above).abs() < 1e-12);
    }

    #[test]
    fn pg_mean_matches_log_partition_derivative() {
        // E[ω] = d/ds log cosh(sqrt(2s)/2) with s = c²/2.
        let lc = |s: f64| log_cosh((2.0 * s).sqrt() / 2.0);
        for &c in &[0.3, 0.8, 1.5, 2.0, 4.0, 7.5] {
            let s: f64 = 0.5 * c * c;
            let h = 1e-5 * s;
            let fd = (lc(s + h) - lc(s - h)) / (2.0 * h);
            assert!((fd - pg_mean(1.0, c)).abs() < 1e-6, "c = {c}");
        }
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(700.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        for &z in &[-30.0, -2.5, -0.1, 0.7, 3.0, 45.0] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
            assert!(sigmoid(z) * sigmoid(-z) <= 0.25);
            assert!((log_sigmoid(z) - sigmoid(z).ln()).abs() < 1e-12 * (1.0 + z.abs()));
        }
        assert!(log_sigmoid(-800.0).is_finite());
    }

    #[test]
    fn h_fn_values() {
        assert!((h_fn(0.0, 2.0) - (1.0 - LN_2)).abs() < 1e-15);
        assert!((h_fn(1.0, 0.0) + LN_2).abs() < 1e-15);
        assert!((h_fn(0.25, 1.5) - (0.75 - 0.28125 - LN_2)).abs() < 1e-15);
    }

    #[test]
    fn log_cosh_is_stable() {
        assert!((log_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(800.0) - (800.0 - LN_2)).abs() < 1e-12);
    }
}
