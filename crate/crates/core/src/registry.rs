//! Estimators selected by name at run time, and the JSON form of the models
//! they produce.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::FitConfig;
use crate::dataset::Dataset;
use crate::em::{fit_em, EmModel, SgpComponent};
use crate::error::{Error, Result};
use crate::hawkes::Rates;
use crate::kernel::{InducingGrid, KernelHyperparams};
use crate::mle::{fit_mle_model, ExpHawkesParams, MleModel};
use crate::report::{FitReport, GridEstimates};
use crate::sgp::GaussianFactor;
use crate::vi::{fit_vi, GammaFactor, ViComponent, ViModel};

pub trait FittedModel: Send + Sync {
    fn method(&self) -> &str;
    fn rates(&self) -> Result<Rates>;
    fn estimates(&self, points: usize) -> Result<GridEstimates>;
    fn to_json(&self) -> Result<Value>;
}

pub struct FitOutcome {
    pub model: Box<dyn FittedModel>,
    pub report: FitReport,
}

pub trait Estimator: Send + Sync {
    fn name(&self) -> &str;
    fn fit(&self, data: &Dataset, config: &FitConfig) -> Result<FitOutcome>;
    fn load(&self, json: &Value) -> Result<Box<dyn FittedModel>>;
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format { what: "model".into(), detail: detail.into() }
}

#[derive(Debug, Serialize, Deserialize)]
struct InducingJson {
    inducing_points: Vec<f64>,
    domain: f64,
    theta0: f64,
    theta1: f64,
}

impl InducingJson {
    fn new(grid: &InducingGrid, hp: &KernelHyperparams) -> Self {
        Self { inducing_points: grid.points().to_vec(), domain: grid.domain(), theta0: hp.theta0, theta1: hp.theta1 }
    }

    fn parts(&self) -> Result<(InducingGrid, KernelHyperparams)> {
        Ok((
            InducingGrid::new(self.inducing_points.clone(), self.domain)?,
            KernelHyperparams::new(self.theta0, self.theta1)?,
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SgpJson {
    lambda_star: f64,
    #[serde(flatten)]
    inducing: InducingJson,
    u: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmJson {
    method: String,
    window: f64,
    support: f64,
    relative_jitter: f64,
    mu: SgpJson,
    phi: SgpJson,
}

fn sgp_to_json(c: &SgpComponent) -> SgpJson {
    SgpJson { lambda_star: c.lambda_star, inducing: InducingJson::new(&c.grid, &c.hp), u: c.u.iter().copied().collect() }
}

fn sgp_from_json(j: &SgpJson) -> Result<SgpComponent> {
    let (grid, hp) = j.inducing.parts()?;
    if j.u.len() != grid.len() {
        return Err(format_err(format!("{} inducing values for {} inducing points", j.u.len(), grid.len())));
    }
    if !(j.lambda_star > 0.0 && j.lambda_star.is_finite()) {
        return Err(format_err(format!("lambda_star must be positive, got {}", j.lambda_star)));
    }
    Ok(SgpComponent { lambda_star: j.lambda_star, grid, u: DVector::from_vec(j.u.clone()), hp })
}

impl FittedModel for EmModel {
    fn method(&self) -> &str {
        "em"
    }
    fn rates(&self) -> Result<Rates> {
        EmModel::rates(self)
    }
    fn estimates(&self, points: usize) -> Result<GridEstimates> {
        Ok(GridEstimates::from_rates(&EmModel::rates(self)?, self.window, points))
    }
    fn to_json(&self) -> Result<Value> {
        Ok(serde_json::to_value(EmJson {
            method: "em".into(),
            window: self.window,
            support: self.support,
            relative_jitter: self.relative_jitter,
            mu: sgp_to_json(&self.mu),
            phi: sgp_to_json(&self.phi),
        })?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ViComponentJson {
    /// Posterior mean of the rate bound.
    lambda_star: f64,
    alpha: f64,
    beta: f64,
    #[serde(flatten)]
    inducing: InducingJson,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ViJson {
    method: String,
    window: f64,
    support: f64,
    relative_jitter: f64,
    gh_order: usize,
    mu: ViComponentJson,
    phi: ViComponentJson,
}

fn vi_to_json(c: &ViComponent) -> ViComponentJson {
    let cov = &c.q_u.cov;
    ViComponentJson {
        lambda_star: c.q_lambda.mean(),
        alpha: c.q_lambda.alpha,
        beta: c.q_lambda.beta,
        inducing: InducingJson::new(&c.grid, &c.hp),
        mean: c.q_u.mean.iter().copied().collect(),
        cov: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
    }
}

fn vi_from_json(j: &ViComponentJson) -> Result<ViComponent> {
    let (grid, hp) = j.inducing.parts()?;
    let n = grid.len();
    if j.mean.len() != n || j.cov.len() != n || j.cov.iter().any(|r| r.len() != n) {
        return Err(format_err(format!("posterior moments do not match {n} inducing points")));
    }
    let cov = DMatrix::from_fn(n, n, |i, k| j.cov[i][k]);
    Ok(ViComponent {
        grid,
        hp,
        q_u: GaussianFactor { mean: DVector::from_vec(j.mean.clone()), cov },
        q_lambda: GammaFactor::new(j.alpha, j.beta)?,
    })
}

impl FittedModel for ViModel {
    fn method(&self) -> &str {
        "vi"
    }
    fn rates(&self) -> Result<Rates> {
        ViModel::rates(self)
    }
    fn estimates(&self, points: usize) -> Result<GridEstimates> {
        ViModel::estimates(self, points)
    }
    fn to_json(&self) -> Result<Value> {
        Ok(serde_json::to_value(ViJson {
            method: "vi".into(),
            window: self.window,
            support: self.support,
            relative_jitter: self.relative_jitter,
            gh_order: self.gh_order,
            mu: vi_to_json(&self.mu),
            phi: vi_to_json(&self.phi),
        })?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MleJson {
    method: String,
    mu: f64,
    alpha: f64,
    beta: f64,
    window: f64,
    support: f64,
}

impl FittedModel for MleModel {
    fn method(&self) -> &str {
        "mle"
    }
    fn rates(&self) -> Result<Rates> {
        MleModel::rates(self)
    }
    fn estimates(&self, points: usize) -> Result<GridEstimates> {
        Ok(MleModel::estimates(self, points))
    }
    fn to_json(&self) -> Result<Value> {
        let p = self.params;
        Ok(serde_json::to_value(MleJson {
            method: "mle".into(),
            mu: p.mu,
            alpha: p.alpha,
            beta: p.beta,
            window: self.window,
            support: self.support,
        })?)
    }
}

fn check_method(json: &Value, expected: &str) -> Result<()> {
    match json.get("method").and_then(Value::as_str) {
        Some(m) if m == expected => Ok(()),
        Some(m) => Err(format_err(format!("expected method `{expected}`, found `{m}`"))),
        None => Err(format_err("missing `method` field")),
    }
}

pub struct EmEstimator;

impl Estimator for EmEstimator {
    fn name(&self) -> &str {
        "em"
    }
    fn fit(&self, data: &Dataset, config: &FitConfig) -> Result<FitOutcome> {
        let (model, report) = fit_em(data, config)?;
        Ok(FitOutcome { model: Box::new(model), report })
    }
    fn load(&self, json: &Value) -> Result<Box<dyn FittedModel>> {
        check_method(json, "em")?;
        let j: EmJson = serde_json::from_value(json.clone())?;
        Ok(Box::new(EmModel {
            mu: sgp_from_json(&j.mu)?,
            phi: sgp_from_json(&j.phi)?,
            window: j.window,
            support: j.support,
            relative_jitter: j.relative_jitter,
        }))
    }
}

pub struct ViEstimator;

impl Estimator for ViEstimator {
    fn name(&self) -> &str {
        "vi"
    }
    fn fit(&self, data: &Dataset, config: &FitConfig) -> Result<FitOutcome> {
        let (model, report) = fit_vi(data, config)?;
        Ok(FitOutcome { model: Box::new(model), report })
    }
    fn load(&self, json: &Value) -> Result<Box<dyn FittedModel>> {
        check_method(json, "vi")?;
        let j: ViJson = serde_json::from_value(json.clone())?;
        Ok(Box::new(ViModel {
            mu: vi_from_json(&j.mu)?,
            phi: vi_from_json(&j.phi)?,
            window: j.window,
            support: j.support,
            relative_jitter: j.relative_jitter,
            gh_order: j.gh_order,
        }))
    }
}

pub struct MleEstimator;

impl Estimator for MleEstimator {
    fn name(&self) -> &str {
        "mle"
    }
    fn fit(&self, data: &Dataset, config: &FitConfig) -> Result<FitOutcome> {
        let (model, report) = fit_mle_model(data, config)?;
        Ok(FitOutcome { model: Box::new(model), report })
    }
    fn load(&self, json: &Value) -> Result<Box<dyn FittedModel>> {
        check_method(json, "mle")?;
        let j: MleJson = serde_json::from_value(json.clone())?;
        Ok(Box::new(MleModel {
            params: ExpHawkesParams::new(j.mu, j.alpha, j.beta)?,
            window: j.window,
            support: j.support,
        }))
    }
}

#[derive(Default, Clone)]
pub struct EstimatorRegistry {
    estimators: BTreeMap<String, Arc<dyn Estimator>>,
}

impl EstimatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtin() -> Self {
        let mut reg = Self::new();
        reg.register(Arc::new(EmEstimator));
        reg.register(Arc::new(ViEstimator));
        reg.register(Arc::new(MleEstimator));
        reg
    }

    pub fn register(&mut self, estimator: Arc<dyn Estimator>) {
        self.estimators.insert(estimator.name().to_string(), estimator);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Estimator>> {
        self.estimators
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Unknown { kind: "method", name: name.to_string() })
    }

    pub fn names(&self) -> Vec<&str> {
        self.estimators.keys().map(String::as_str).collect()
    }

    /// Rebuild a model from its JSON form, dispatching on its `method` field.
    pub fn load(&self, json: &Value) -> Result<Box<dyn FittedModel>> {
        let method = json
            .get("method")
            .and_then(Value::as_str)
            .ok_or_else(|| format_err("missing `method` field"))?;
        self.get(method)?.load(json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names() {
        let reg = EstimatorRegistry::with_builtin();
        assert_eq!(reg.names(), vec!["em", "mle", "vi"]);
        assert!(matches!(reg.get("wh"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn mle_json_round_trip() {
        let model = MleModel { params: ExpHawkesParams::new(0.9, 0.3, 1.7).unwrap(), window: 100.0, support: 6.0 };
        let json = FittedModel::to_json(&model).unwrap();
        assert_eq!(json["alpha"], 0.3);
        let back = EstimatorRegistry::with_builtin().load(&json).unwrap();
        assert_eq!(back.method(), "mle");
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn method_mismatch_is_reported() {
        let json = serde_json::json!({"method": "em", "mu": 1.0, "alpha": 0.1, "beta": 1.0, "window": 1.0, "support": 1.0});
        assert!(MleEstimator.load(&json).is_err());
        assert!(EstimatorRegistry::with_builtin().load(&serde_json::json!({})).is_err());
    }
}
