//! Fit configuration shared by all estimators. Field names on the wire match
//! the documented config keys.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernel::{InducingGrid, KernelHyperparams, DEFAULT_RELATIVE_JITTER};
use crate::sgp::ProblemShape;

/// A value given either once for both latent functions or per function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerComponent {
    Both(f64),
    Split { mu: f64, phi: f64 },
}

impl PerComponent {
    pub fn mu(&self) -> f64 {
        match *self {
            Self::Both(v) => v,
            Self::Split { mu, .. } => mu,
        }
    }

    pub fn phi(&self) -> f64 {
        match *self {
            Self::Both(v) => v,
            Self::Split { phi, .. } => phi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    #[serde(rename = "S_mu")]
    pub s_mu: usize,
    #[serde(rename = "S_phi")]
    pub s_phi: usize,
    #[serde(rename = "quad_order_T")]
    pub quad_order_t: usize,
    #[serde(rename = "quad_order_Tphi")]
    pub quad_order_tphi: usize,
    pub max_iter: usize,
    /// Relative change of the monitored objective that counts as converged.
    /// Zero runs exactly `max_iter` iterations.
    pub tol: f64,
    /// Iterations between hyperparameter refreshes; zero freezes them.
    pub hyper_refresh_every: usize,
    pub theta0_init: PerComponent,
    /// Inverse squared length-scale; by default chosen from the inducing
    /// spacing so that neighbouring inducing values are strongly coupled.
    pub theta1_init: Option<PerComponent>,
    /// Diagonal jitter on Gram matrices, relative to `θ₀`.
    pub jitter: f64,
    pub gh_order: usize,
    pub seed: u64,
    /// Mean-field only: treat the Gaussian factors as point masses.
    pub fix_variance: bool,
    /// Reserved.
    pub band_quantile: Option<f64>,
    /// Points in the grid on which fitted functions are reported.
    pub eval_points: usize,
    /// Parametric baseline only: number of optimizer starts.
    pub mle_starts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            s_mu: 10,
            s_phi: 10,
            quad_order_t: 50,
            quad_order_tphi: 50,
            max_iter: 200,
            tol: 1e-4,
            hyper_refresh_every: 20,
            theta0_init: PerComponent::Both(1.0),
            theta1_init: None,
            jitter: DEFAULT_RELATIVE_JITTER,
            gh_order: 30,
            seed: 0,
            fix_variance: false,
            band_quantile: None,
            eval_points: 200,
            mle_starts: 3,
        }
    }
}

/// Length-scale, in units of inducing spacing, used when `theta1_init` is unset.
const SPACING_LENGTH_SCALES: f64 = 1.5;

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_mu < 2 || self.s_phi < 2 {
            return Err(invalid("S_mu and S_phi must be at least 2"));
        }
        if self.quad_order_t == 0 || self.quad_order_tphi == 0 || self.gh_order == 0 {
            return Err(invalid("quadrature orders must be positive"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid(format!("tol must be non-negative, got {}", self.tol)));
        }
        if !(self.jitter >= 0.0) {
            return Err(invalid(format!("jitter must be non-negative, got {}", self.jitter)));
        }
        if self.eval_points < 2 {
            return Err(invalid("eval_points must be at least 2"));
        }
        if self.mle_starts == 0 {
            return Err(invalid("mle_starts must be at least 1"));
        }
        if let Some(q) = self.band_quantile {
            if !(q > 0.0 && q < 1.0) {
                return Err(invalid(format!("band_quantile must lie in (0, 1), got {q}")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> ProblemShape {
        ProblemShape {
            inducing_mu: self.s_mu,
            inducing_phi: self.s_phi,
            quad_order_mu: self.quad_order_t,
            quad_order_phi: self.quad_order_tphi,
            relative_jitter: self.jitter,
        }
    }

    fn default_theta1(grid: &InducingGrid) -> f64 {
        let ell = SPACING_LENGTH_SCALES * grid.spacing();
        1.0 / (ell * ell)
    }

    /// Initial hyperparameters for the baseline and trigger grids.
    pub fn initial_hyperparams(
        &self,
        mu_grid: &InducingGrid,
        phi_grid: &InducingGrid,
    ) -> Result<(KernelHyperparams, KernelHyperparams)> {
        let (t1_mu, t1_phi) = match self.theta1_init {
            Some(v) => (v.mu(), v.phi()),
            None => (Self::default_theta1(mu_grid), Self::default_theta1(phi_grid)),
        };
        Ok((
            KernelHyperparams::new(self.theta0_init.mu(), t1_mu)?,
            KernelHyperparams::new(self.theta0_init.phi(), t1_phi)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_and_defaults() {
        let c: FitConfig = serde_json::from_str(r#"{"S_mu": 12, "quad_order_Tphi": 30, "theta1_init": {"mu": 0.1, "phi": 2.0}}"#).unwrap();
        assert_eq!(c.s_mu, 12);
        assert_eq!(c.s_phi, 10);
        assert_eq!(c.quad_order_tphi, 30);
        assert_eq!(c.theta1_init, Some(PerComponent::Split { mu: 0.1, phi: 2.0 }));
        assert_eq!(c.theta0_init, PerComponent::Both(1.0));
        let c: FitConfig = serde_json::from_str(r#"{"theta0_init": 3.0}"#).unwrap();
        assert_eq!(c.theta0_init.phi(), 3.0);
        assert!(serde_json::from_str::<FitConfig>(r#"{"S_muu": 3}"#).is_err());
    }

    #[test]
    fn default_length_scale_follows_spacing() {
        let c = FitConfig::default();
        let mu = InducingGrid::uniform(11, 100.0).unwrap();
        let phi = InducingGrid::uniform(7, 6.0).unwrap();
        let (a, b) = c.initial_hyperparams(&mu, &phi).unwrap();
        assert!((a.theta1 - 1.0 / 225.0).abs() < 1e-15);
        assert!((b.theta1 - 1.0 / 2.25).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let c = FitConfig { s_mu: 1, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(FitConfig::default().validate().is_ok());
    }
}
