//! Anchored least-squares surrogates `ℓ_t` and their stochastic variants.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix, Vector, DEFAULT_RANK_TOL};
use crate::models::PredictionModel;
use crate::vi_problems::DomainSpec;

/// How the surrogate optimum `ℓ_t*` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LstarMode {
    Exact,
    #[default]
    Zero,
}

/// α-descent stopping rule for the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRule {
    pub alpha: f64,
    #[serde(default)]
    pub lstar_mode: LstarMode,
    pub max_inner: usize,
}

impl AlphaRule {
    pub fn new(alpha: f64, lstar_mode: LstarMode, max_inner: usize) -> Result<Self> {
        let rule = Self {
            alpha,
            lstar_mode,
            max_inner,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} must lie in [0, 1)",
                self.alpha
            )));
        }
        if self.max_inner == 0 {
            return Err(Error::InvalidConfig("max_inner must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// `loss_now − ℓ* ≤ α²(loss_anchor − ℓ*)`.
pub fn alpha_satisfied(rule: &AlphaRule, loss_now: f64, loss_anchor: f64, lstar: f64) -> bool {
    loss_now - lstar <= rule.alpha * rule.alpha * (loss_anchor - lstar)
}

/// A smooth objective over parameters.
pub trait Objective {
    fn param_dim(&self) -> usize;

    fn value(&self, theta: &[f64]) -> Result<f64>;

    fn gradient(&self, theta: &[f64]) -> Result<Vector>;

    /// The deterministic least-squares form, when second-order steps apply.
    fn least_squares(&self) -> Option<&SurrogateLoss<'_>> {
        None
    }
}

/// `ℓ(θ) = ½‖g(θ) − target‖²_W` anchored at `θ_t`.
#[derive(Clone)]
pub struct SurrogateLoss<'a> {
    model: &'a dyn PredictionModel,
    anchor_theta: Vector,
    anchor_preds: Vector,
    target: Vector,
    weight: Option<Vector>,
    eta: f64,
}

impl std::fmt::Debug for SurrogateLoss<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurrogateLoss")
            .field("anchor_theta", &self.anchor_theta)
            .field("target", &self.target)
            .field("weight", &self.weight)
            .field("eta", &self.eta)
            .finish_non_exhaustive()
    }
}

/// Builds `ℓ_t` with target `g(θ_t) − η·f_val`.
pub fn build_surrogate<'a>(
    model: &'a dyn PredictionModel,
    theta_t: &[f64],
    f_val: &[f64],
    eta: f64,
    weight: Option<Vector>,
) -> Result<SurrogateLoss<'a>> {
    check_len(model.param_dim(), theta_t.len(), "surrogate anchor")?;
    check_len(model.output_dim(), f_val.len(), "surrogate operator value")?;
    if let Some(w) = &weight {
        check_len(model.output_dim(), w.len(), "surrogate weight")?;
        if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidConfig("surrogate weights must be ≥ 0".into()));
        }
    }
    let anchor_preds = model.forward(theta_t)?;
    let target = linalg::axpy(&anchor_preds, -eta, f_val);
    Ok(SurrogateLoss {
        model,
        anchor_theta: theta_t.to_vec(),
        anchor_preds,
        target,
        weight,
        eta,
    })
}

impl<'a> SurrogateLoss<'a> {
    pub fn model(&self) -> &'a dyn PredictionModel {
        self.model
    }

    pub fn anchor_theta(&self) -> &[f64] {
        &self.anchor_theta
    }

    pub fn anchor_preds(&self) -> &[f64] {
        &self.anchor_preds
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn weight(&self) -> Option<&[f64]> {
        self.weight.as_deref()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `½‖z − target‖²_W` for a prediction vector.
    pub fn value_at_preds(&self, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, (zi, ti)) in z.iter().zip(&self.target).enumerate() {
            let d = zi - ti;
            s += self.w(i) * d * d;
        }
        0.5 * s
    }

    fn w(&self, i: usize) -> f64 {
        self.weight.as_ref().map_or(1.0, |w| w[i])
    }

    /// `W^{1/2}(g(θ) − target)`.
    pub fn residual(&self, theta: &[f64]) -> Result<Vector> {
        let z = self.model.forward(theta)?;
        Ok(z.iter()
            .zip(&self.target)
            .enumerate()
            .map(|(i, (zi, ti))| self.w(i).sqrt() * (zi - ti))
            .collect())
    }

    /// `W^{1/2} Dg(θ)`.
    pub fn residual_jacobian(&self, theta: &[f64]) -> Result<Matrix> {
        let mut j = self.model.jacobian(theta)?;
        if let Some(w) = &self.weight {
            for (i, wi) in w.iter().enumerate() {
                let s = wi.sqrt();
                for c in 0..j.cols() {
                    j[(i, c)] *= s;
                }
            }
        }
        Ok(j)
    }

    /// Minimizer of `½‖z − target‖²_W` over the closure of the model image.
    pub fn optimal_preds(&self) -> Result<Vector> {
        if let Some(lin) = self.model.as_linear() {
            let ws: Vector = (0..self.target.len()).map(|i| self.w(i).sqrt()).collect();
            let mut a = lin.phi().clone();
            for (i, s) in ws.iter().enumerate() {
                for c in 0..a.cols() {
                    a[(i, c)] *= s;
                }
            }
            let b: Vector = self.target.iter().zip(&ws).map(|(t, s)| t * s).collect();
            let theta = linalg::pinv_solve(&a, &b, DEFAULT_RANK_TOL)?;
            return lin.phi().mat_vec(&theta);
        }
        match self.model.image_closure() {
            Some(DomainSpec::SimplexProduct { .. }) if self.weight.is_some() => {
                Err(Error::UnsupportedModel)
            }
            // Box and whole-space projections are separable, so a diagonal
            // weight does not move the minimizer.
            Some(domain) => Ok(domain.project(&self.target)),
            None => Err(Error::UnsupportedModel),
        }
    }

    pub fn anchor_value(&self) -> f64 {
        self.value_at_preds(&self.anchor_preds)
    }
}

impl Objective for SurrogateLoss<'_> {
    fn param_dim(&self) -> usize {
        self.model.param_dim()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.value_at_preds(&self.model.forward(theta)?))
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vector> {
        check_len(self.param_dim(), theta.len(), "surrogate parameters")?;
        let z = self.model.forward(theta)?;
        let u: Vector = z
            .iter()
            .zip(&self.target)
            .enumerate()
            .map(|(i, (zi, ti))| self.w(i) * (zi - ti))
            .collect();
        self.model.vjp(theta, &u)
    }

    fn least_squares(&self) -> Option<&SurrogateLoss<'_>> {
        Some(self)
    }
}

pub fn surrogate_grad(s: &SurrogateLoss<'_>, theta: &[f64]) -> Result<Vector> {
    s.gradient(theta)
}

/// Surrogate optimum `ℓ_t*`.
pub fn lstar(s: &SurrogateLoss<'_>, mode: LstarMode) -> Result<f64> {
    match mode {
        LstarMode::Zero => Ok(0.0),
        LstarMode::Exact => Ok(s.value_at_preds(&s.optimal_preds()?)),
    }
}

/// Three-term stochastic surrogate. `f_hat[k]` is the operator estimate at
/// prediction coordinate `linear_idx[k]`; indices may repeat.
#[derive(Clone)]
pub struct StochasticSurrogate<'a> {
    model: &'a dyn PredictionModel,
    anchor_theta: Vector,
    anchor_preds: Vector,
    f_hat: Vector,
    eta: f64,
    linear_idx: Vec<usize>,
    quad_idx: Vec<usize>,
}

impl std::fmt::Debug for StochasticSurrogate<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StochasticSurrogate")
            .field("anchor_theta", &self.anchor_theta)
            .field("f_hat", &self.f_hat)
            .field("eta", &self.eta)
            .field("linear_idx", &self.linear_idx)
            .field("quad_idx", &self.quad_idx)
            .finish_non_exhaustive()
    }
}

pub fn build_stochastic_surrogate<'a>(
    model: &'a dyn PredictionModel,
    theta_t: &[f64],
    f_hat: &[f64],
    eta: f64,
    linear_idx: &[usize],
    quad_idx: &[usize],
) -> Result<StochasticSurrogate<'a>> {
    if linear_idx.is_empty() || quad_idx.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_len(
        linear_idx.len(),
        f_hat.len(),
        "stochastic operator estimate",
    )?;
    check_len(model.param_dim(), theta_t.len(), "surrogate anchor")?;
    let n = model.output_dim();
    if let Some(&bad) = linear_idx.iter().chain(quad_idx).find(|&&i| i >= n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad,
            context: "surrogate index out of range",
        });
    }
    Ok(StochasticSurrogate {
        model,
        anchor_theta: theta_t.to_vec(),
        anchor_preds: model.forward(theta_t)?,
        f_hat: f_hat.to_vec(),
        eta,
        linear_idx: linear_idx.to_vec(),
        quad_idx: quad_idx.to_vec(),
    })
}

impl StochasticSurrogate<'_> {
    fn lin_scale(&self) -> f64 {
        self.model.output_dim() as f64 / self.linear_idx.len() as f64
    }

    fn quad_scale(&self) -> f64 {
        self.model.output_dim() as f64 / self.quad_idx.len() as f64
    }

    pub fn anchor_theta(&self) -> &[f64] {
        &self.anchor_theta
    }

    pub fn anchor_value(&self) -> f64 {
        0.5 * self.eta * self.eta * self.lin_scale() * linalg::norm_sq(&self.f_hat)
    }
}

impl Objective for StochasticSurrogate<'_> {
    fn param_dim(&self) -> usize {
        self.model.param_dim()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        let z = self.model.forward(theta)?;
        let lin: f64 = self
            .linear_idx
            .iter()
            .zip(&self.f_hat)
            .map(|(&i, f)| f * (z[i] - self.anchor_preds[i]))
            .sum();
        let quad: f64 = self
            .quad_idx
            .iter()
            .map(|&i| (z[i] - self.anchor_preds[i]).powi(2))
            .sum();
        Ok(
            self.anchor_value()
                + self.eta * self.lin_scale() * lin
                + 0.5 * self.quad_scale() * quad,
        )
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vector> {
        let z = self.model.forward(theta)?;
        let mut u = vec![0.0; z.len()];
        let ls = self.eta * self.lin_scale();
        for (&i, f) in self.linear_idx.iter().zip(&self.f_hat) {
            u[i] += ls * f;
        }
        let qs = self.quad_scale();
        for &i in &self.quad_idx {
            u[i] += qs * (z[i] - self.anchor_preds[i]);
        }
        self.model.vjp(theta, &u)
    }
}
