//! The outer surrogate loop, exact-step oracles and convergence audits.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Vector};
use crate::models::PredictionModel;
use crate::seeding::derive_seed;
use crate::solvers::{run_inner, InnerOutcome, InnerStrategy};
use crate::surrogate::{build_surrogate, lstar, LstarMode, Objective, SurrogateLoss};
use crate::vi_problems::{AffineOperator, DomainSpec, VIOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterConfig {
    pub eta: f64,
    pub t_outer: usize,
    pub strategy: InnerStrategy,
    #[serde(default)]
    pub lstar_mode: LstarMode,
    /// Stop early once `dist_sq` drops below this value.
    #[serde(default)]
    pub stop_below: Option<f64>,
    #[serde(default)]
    pub record_wall_time: bool,
}

impl OuterConfig {
    pub fn new(eta: f64, t_outer: usize, strategy: InnerStrategy) -> Self {
        Self {
            eta,
            t_outer,
            strategy,
            lstar_mode: strategy
                .alpha_rule()
                .map_or(LstarMode::Zero, |r| r.lstar_mode),
            stop_below: None,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig("eta must be > 0".into()));
        }
        if self.t_outer == 0 {
            return Err(Error::InvalidConfig("t_outer must be ≥ 1".into()));
        }
        self.strategy.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub iter: usize,
    pub dist_sq: f64,
    pub loss_anchor: f64,
    pub loss_final: f64,
    pub loss_ratio: f64,
    pub inner_steps: usize,
    pub grad_evals: usize,
    pub alpha_flag: bool,
    pub wall_ms: f64,
}

impl TrajectoryRow {
    /// A row carrying only a distance, for runs without a surrogate.
    pub fn distance_only(iter: usize, dist_sq: f64) -> Self {
        Self {
            iter,
            dist_sq,
            loss_anchor: 0.0,
            loss_final: 0.0,
            loss_ratio: 0.0,
            inner_steps: 0,
            grad_evals: 0,
            alpha_flag: false,
            wall_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Stopped early after reaching the `stop_below` threshold.
    Converged,
    Aborted(Error),
}

/// Per-iteration metrics. Row `t` describes the update from `z_t` to
/// `z_{t+1}`, so `rows[t-1].dist_sq = ‖z_{t+1} − z*‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub rows: Vec<TrajectoryRow>,
    pub initial_dist_sq: f64,
    /// `θ_1, θ_2, …` (empty for runs without parameters).
    pub thetas: Vec<Vector>,
    /// `z_1, z_2, …`.
    pub iterates: Vec<Vector>,
    pub lstars: Vec<f64>,
    pub f_evals: usize,
    pub status: RunStatus,
}

impl TrajectoryRecord {
    pub fn empty(initial_dist_sq: f64) -> Self {
        Self {
            rows: Vec::new(),
            initial_dist_sq,
            thetas: Vec::new(),
            iterates: Vec::new(),
            lstars: Vec::new(),
            f_evals: 0,
            status: RunStatus::Completed,
        }
    }

    pub fn dist_sq(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.dist_sq).collect()
    }

    /// First iteration whose `dist_sq` falls below `tol`.
    pub fn first_below(&self, tol: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.dist_sq < tol).map(|r| r.iter)
    }

    pub fn final_theta(&self) -> Option<&[f64]> {
        self.thetas.last().map(|v| v.as_slice())
    }

    pub fn is_aborted(&self) -> bool {
        matches!(self.status, RunStatus::Aborted(_))
    }
}

/// Inner-loop behavior plugged into the outer loop.
pub trait InnerRule {
    fn run(
        &mut self,
        s: &SurrogateLoss<'_>,
        theta_t: &[f64],
        lstar: f64,
        loss_anchor: f64,
    ) -> Result<InnerOutcome>;
}

impl InnerRule for InnerStrategy {
    fn run(
        &mut self,
        s: &SurrogateLoss<'_>,
        theta_t: &[f64],
        lstar: f64,
        loss_anchor: f64,
    ) -> Result<InnerOutcome> {
        run_inner(s, theta_t, self, lstar, loss_anchor)
    }
}

fn dist_to_solution(op: &dyn VIOperator, z: &[f64]) -> f64 {
    op.solution().map_or(f64::NAN, |s| linalg::dist_sq(z, &s))
}

/// Surrogate outer loop with the configured inner strategy.
pub fn run_outer(
    model: &dyn PredictionModel,
    op: &dyn VIOperator,
    theta_init: &[f64],
    cfg: &OuterConfig,
) -> Result<TrajectoryRecord> {
    let mut rule = cfg.strategy;
    run_outer_with(model, op, theta_init, cfg, &mut rule)
}

/// Surrogate outer loop with an arbitrary inner rule.
///
/// Dimension and configuration errors are returned as `Err`; failures during
/// iteration abort the run and keep the partial record.
pub fn run_outer_with(
    model: &dyn PredictionModel,
    op: &dyn VIOperator,
    theta_init: &[f64],
    cfg: &OuterConfig,
    rule: &mut dyn InnerRule,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    check_len(model.param_dim(), theta_init.len(), "initial parameters")?;
    check_len(model.output_dim(), op.dim(), "model output vs operator")?;
    let z1 = model.forward(theta_init)?;
    let mut rec = TrajectoryRecord::empty(dist_to_solution(op, &z1));
    rec.thetas.push(theta_init.to_vec());
    rec.iterates.push(z1);
    for t in 1..=cfg.t_outer {
        let start = cfg.record_wall_time.then(Instant::now);
        match outer_step(model, op, cfg, rule, &mut rec) {
            Ok((mut row, lstar_t)) => {
                row.iter = t;
                if let Some(s) = start {
                    row.wall_ms = s.elapsed().as_secs_f64() * 1e3;
                }
                let done = cfg.stop_below.is_some_and(|tol| row.dist_sq < tol);
                rec.rows.push(row);
                rec.lstars.push(lstar_t);
                if done {
                    rec.status = RunStatus::Converged;
                    break;
                }
            }
            Err(e @ (Error::DimensionMismatch { .. } | Error::UnsupportedModel)) if t == 1 => {
                return Err(e)
            }
            Err(e) => {
                rec.status = RunStatus::Aborted(e);
                break;
            }
        }
    }
    Ok(rec)
}

fn outer_step(
    model: &dyn PredictionModel,
    op: &dyn VIOperator,
    cfg: &OuterConfig,
    rule: &mut dyn InnerRule,
    rec: &mut TrajectoryRecord,
) -> Result<(TrajectoryRow, f64)> {
    let theta_t = rec.thetas.last().expect("seeded with θ_1").clone();
    let z_t = rec.iterates.last().expect("seeded with z_1");
    let f = op.eval(z_t)?;
    rec.f_evals += 1;
    if !linalg::all_finite(&f) {
        return Err(Error::NumericalBlowup("non-finite operator value".into()));
    }
    let s = build_surrogate(model, &theta_t, &f, cfg.eta, None)?;
    let ls = lstar(&s, cfg.lstar_mode)?;
    let anchor = s.anchor_value();
    let out = rule.run(&s, &theta_t, ls, anchor)?;
    if !linalg::all_finite(&out.theta) {
        return Err(Error::NumericalBlowup("non-finite parameters".into()));
    }
    let z_next = model.forward(&out.theta)?;
    if !linalg::all_finite(&z_next) {
        return Err(Error::NumericalBlowup("non-finite predictions".into()));
    }
    let row = TrajectoryRow {
        iter: 0,
        dist_sq: dist_to_solution(op, &z_next),
        loss_anchor: anchor,
        loss_final: out.final_loss,
        loss_ratio: if anchor > 0.0 {
            out.final_loss / anchor
        } else {
            0.0
        },
        inner_steps: out.steps,
        grad_evals: out.grad_evals,
        alpha_flag: out.cap_hit,
        wall_ms: 0.0,
    };
    rec.thetas.push(out.theta);
    rec.iterates.push(z_next);
    Ok((row, ls))
}

/// `Π(z − ηF(z))`.
pub fn exact_step(op: &dyn VIOperator, z: &[f64], eta: f64) -> Result<Vector> {
    let f = op.eval(z)?;
    Ok(op.domain().project(&linalg::axpy(z, -eta, &f)))
}

/// `‖z_next − z_t*‖ ≤ αη‖F(z_t) − F(z*)‖ + 1e-9`.
pub fn bias_check(
    z_next: &[f64],
    z_t_star: &[f64],
    f_t: &[f64],
    f_star: &[f64],
    alpha: f64,
    eta: f64,
) -> bool {
    linalg::dist_sq(z_next, z_t_star).sqrt()
        <= alpha * eta * linalg::dist_sq(f_t, f_star).sqrt() + 1e-9
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasAudit {
    pub checked: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen (negative when every check passes).
    pub worst_margin: f64,
    /// α measured from the achieved loss ratio at each iteration.
    pub alphas: Vec<f64>,
}

/// Checks the bias inequality at every recorded iteration.
///
/// `z_t*` is the projection of `z_t − ηF(z_t)` onto the closure of the model
/// image and α is measured from `(ℓ_t(θ_{t+1}) − ℓ_t*)/(ℓ_t(θ_t) − ℓ_t*)`.
pub fn bias_audit(
    model: &dyn PredictionModel,
    op: &dyn VIOperator,
    rec: &TrajectoryRecord,
    eta: f64,
) -> Result<BiasAudit> {
    let zstar = op
        .solution()
        .ok_or_else(|| Error::InvalidConfig("bias audit needs a known solution".into()))?;
    let f_star = op.eval(&zstar)?;
    let mut audit = BiasAudit {
        checked: 0,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
        alphas: Vec::with_capacity(rec.rows.len()),
    };
    for t in 0..rec.rows.len() {
        let (theta_t, theta_next) = (&rec.thetas[t], &rec.thetas[t + 1]);
        let z_t = &rec.iterates[t];
        let f_t = op.eval(z_t)?;
        let s = build_surrogate(model, theta_t, &f_t, eta, None)?;
        let z_t_star = s.optimal_preds()?;
        let ls = s.value_at_preds(&z_t_star);
        let gap = s.anchor_value() - ls;
        let achieved = s.value(theta_next)? - ls;
        let alpha = if gap > 0.0 {
            (achieved.max(0.0) / gap).sqrt()
        } else {
            0.0
        };
        let z_next = &rec.iterates[t + 1];
        let lhs = linalg::dist_sq(z_next, &z_t_star).sqrt();
        let rhs = alpha * eta * linalg::dist_sq(&f_t, &f_star).sqrt();
        audit.worst_margin = audit.worst_margin.max(lhs - rhs);
        if !bias_check(z_next, &z_t_star, &f_t, &f_star, alpha, eta) {
            audit.violations += 1;
        }
        audit.checked += 1;
        audit.alphas.push(alpha);
    }
    Ok(audit)
}

/// Contraction factors of the deterministic and stochastic analyses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateBounds {
    pub eta: f64,
    pub mu: f64,
    pub lip: f64,
    pub alpha: f64,
    pub c: f64,
    pub kappa_sq: f64,
    pub theorem1_factor: f64,
    pub stoch_factor: f64,
}

pub fn rate_bounds(eta: f64, mu: f64, lip: f64, alpha: f64, c: f64) -> Result<RateBounds> {
    if !(mu > 0.0 && lip > 0.0) {
        return Err(Error::InvalidConfig("mu and lip must be > 0".into()));
    }
    let el = eta * lip;
    Ok(RateBounds {
        eta,
        mu,
        lip,
        alpha,
        c,
        kappa_sq: 1.0 - 2.0 * eta * mu + el * el,
        theorem1_factor: 1.0 - 2.0 * eta * mu + 2.0 * alpha * el + (1.0 + alpha * alpha) * el * el,
        stoch_factor: 1.0 - eta * mu + alpha * alpha,
    })
}

impl RateBounds {
    /// `η²(1+c)σ²`.
    pub fn noise_term(&self, sigma: f64) -> f64 {
        self.eta * self.eta * (1.0 + self.c) * sigma * sigma
    }

    /// `η²(1+c)σ²/(ημ − α²)`, finite only when `ημ > α²`.
    pub fn plateau_bound(&self, sigma: f64) -> Option<f64> {
        let gap = self.eta * self.mu - self.alpha * self.alpha;
        (gap > 0.0).then(|| self.noise_term(sigma) / gap)
    }

    /// `α < μ/L`.
    pub fn condition1(&self) -> bool {
        self.alpha < self.mu / self.lip
    }

    /// `α ≤ C·η^p`.
    pub fn condition2(&self, c_const: f64, p: f64) -> bool {
        self.alpha <= c_const * self.eta.powf(p)
    }

    /// Largest η for which the α-descent factor is below one.
    pub fn eta_threshold(&self) -> f64 {
        2.0 * (self.mu - self.alpha * self.lip)
            / ((1.0 + self.alpha * self.alpha) * self.lip * self.lip)
    }

    pub fn exact_contracts(&self) -> bool {
        self.eta < 2.0 * self.mu / (self.lip * self.lip)
    }
}

fn random_unit<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    loop {
        let v: Vector = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nv = linalg::norm(&v);
        if nv > 1e-12 {
            return linalg::scale(&v, 1.0 / nv);
        }
    }
}

/// Exact projected steps perturbed by `ε_t · u_t` with seeded unit `u_t`.
pub fn quasi_fejer_run(
    op: &AffineOperator,
    eta: f64,
    error_schedule: &dyn Fn(usize) -> f64,
    t_outer: usize,
    z0: &[f64],
    seed: u64,
) -> Result<TrajectoryRecord> {
    check_len(op.dim(), z0.len(), "quasi-Fejér start")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rec = TrajectoryRecord::empty(dist_to_solution(op, z0));
    let mut z = z0.to_vec();
    rec.iterates.push(z.clone());
    for t in 1..=t_outer {
        let eps = error_schedule(t);
        z = exact_step(op, &z, eta)?;
        rec.f_evals += 1;
        if eps != 0.0 {
            let u = random_unit(z.len(), &mut rng);
            z = linalg::axpy(&z, eps, &u);
        }
        rec.rows
            .push(TrajectoryRow::distance_only(t, dist_to_solution(op, &z)));
        rec.iterates.push(z.clone());
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StochasticSummary {
    /// Mean of `½‖z_t − z*‖²` across seeds, `t = 0..=T`.
    pub mean_half_dist_sq: Vec<f64>,
    pub std_err: Vec<f64>,
    pub plateau_bound: f64,
    /// Mean over the second half of the horizon.
    pub steady_state_mean: f64,
    /// Steps in the pre-plateau window used for the decay estimate.
    pub decay_window: usize,
    /// Per-seed `(h_k/h_0)^{1/k}` over the decay window.
    pub decay_factors: Vec<f64>,
    pub bounds: RateBounds,
}

impl StochasticSummary {
    pub fn decay_mean_and_se(&self) -> (f64, f64) {
        mean_and_se(&self.decay_factors)
    }
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo check of the stochastic recursion on an unconstrained
/// affine problem.
///
/// Each step uses `F̂ = F(z) + ξ` with `ξ ~ N(0, σ²/n · I)` and then adds a
/// perturbation of norm `αη‖F̂‖` in a random direction.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_audit(
    op: &AffineOperator,
    eta: f64,
    alpha: f64,
    c: f64,
    sigma: f64,
    seeds: usize,
    t_outer: usize,
    z0: &[f64],
    master_seed: u64,
) -> Result<StochasticSummary> {
    if op.domain() != &DomainSpec::AllSpace {
        return Err(Error::InvalidRegime(
            "stochastic audit needs an unconstrained domain".into(),
        ));
    }
    check_len(op.dim(), z0.len(), "stochastic audit start")?;
    let mu = op.mu().unwrap_or(0.0);
    let lip = op.lip().unwrap_or(0.0);
    if alpha * alpha >= eta * mu {
        return Err(Error::InvalidRegime(format!(
            "α² = {} is not below ημ = {}",
            alpha * alpha,
            eta * mu
        )));
    }
    if seeds == 0 || t_outer == 0 {
        return Err(Error::InvalidConfig(
            "need at least one seed and one step".into(),
        ));
    }
    let bounds = rate_bounds(eta, mu, lip, alpha, c)?;
    let plateau_bound = bounds.plateau_bound(sigma).expect("checked ημ > α²");
    let zstar = op.center().to_vec();
    let n = op.dim();
    let noise_sd = sigma / (n as f64).sqrt();
    let paths: Vec<Vec<f64>> = (0..seeds)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, k as u64));
            let mut z = z0.to_vec();
            let mut h = Vec::with_capacity(t_outer + 1);
            h.push(0.5 * linalg::dist_sq(&z, &zstar));
            for _ in 0..t_outer {
                let mut f = op.eval(&z)?;
                for fi in f.iter_mut() {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    *fi += noise_sd * xi;
                }
                z = linalg::axpy(&z, -eta, &f);
                if alpha > 0.0 {
                    let u = random_unit(n, &mut rng);
                    z = linalg::axpy(&z, alpha * eta * linalg::norm(&f), &u);
                }
                h.push(0.5 * linalg::dist_sq(&z, &zstar));
            }
            Ok(h)
        })
        .collect::<Result<_>>()?;
    let mut mean = Vec::with_capacity(t_outer + 1);
    let mut se = Vec::with_capacity(t_outer + 1);
    for t in 0..=t_outer {
        let col: Vec<f64> = paths.iter().map(|p| p[t]).collect();
        let (m, s) = mean_and_se(&col);
        mean.push(m);
        se.push(s);
    }
    let half = t_outer / 2;
    let steady_state_mean = mean[half..].iter().sum::<f64>() / (mean.len() - half) as f64;
    let decay_window = (1..=t_outer)
        .take_while(|&t| mean[t] >= 10.0 * plateau_bound)
        .last()
        .unwrap_or(1);
    let decay_factors = paths
        .iter()
        .map(|p| (p[decay_window] / p[0]).powf(1.0 / decay_window as f64))
        .collect();
    Ok(StochasticSummary {
        mean_half_dist_sq: mean,
        std_err: se,
        plateau_bound,
        steady_state_mean,
        decay_window,
        decay_factors,
        bounds,
    })
}
