use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::{
    make_slow_mixing_chain, FeatureMap, MarkovChain, TrajectorySampler, Transition,
};
use crate::driver::{RunStatus, TrajectoryRecord, TrajectoryRow};
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::seeding::derive_seed;

/// Trajectory sums behind the estimators `D̂_t`, `Ĉ_t`, `r̂_t`, plus visit
/// and transition counts for the empirical-distribution forms.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    gamma: f64,
    t: usize,
    d_sum: Matrix,
    c_sum: Matrix,
    r_sum: Vector,
    visits: Vec<usize>,
    transitions: Vec<usize>,
    reward_sums: Vector,
}

impl EstimatorState {
    pub fn new(n_states: usize, feature_dim: usize, gamma: f64) -> Self {
        Self {
            gamma,
            t: 0,
            d_sum: Matrix::zeros(feature_dim, feature_dim),
            c_sum: Matrix::zeros(feature_dim, feature_dim),
            r_sum: vec![0.0; feature_dim],
            visits: vec![0; n_states],
            transitions: vec![0; n_states * n_states],
            reward_sums: vec![0.0; n_states],
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_states(&self) -> usize {
        self.visits.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.r_sum.len()
    }

    pub fn visit_counts(&self) -> &[usize] {
        &self.visits
    }

    pub fn transition_count(&self, s: usize, s_next: usize) -> usize {
        self.transitions[s * self.n_states() + s_next]
    }

    fn mean_scale(&self) -> f64 {
        if self.t == 0 {
            0.0
        } else {
            1.0 / self.t as f64
        }
    }

    pub fn d_hat(&self) -> Matrix {
        self.d_sum.scale(self.mean_scale())
    }

    pub fn c_hat(&self) -> Matrix {
        self.c_sum.scale(self.mean_scale())
    }

    pub fn r_hat(&self) -> Vector {
        linalg::scale(&self.r_sum, self.mean_scale())
    }

    pub fn update(&mut self, fm: &FeatureMap, s: usize, s_next: usize, reward: f64) -> Result<()> {
        let n = self.n_states();
        if s >= n || s_next >= n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.max(s_next),
                context: "state index out of range",
            });
        }
        check_len(self.feature_dim(), fm.dim(), "feature dimension")?;
        let (f, g) = (fm.row(s), fm.row(s_next));
        let d = self.feature_dim();
        for a in 0..d {
            for b in 0..d {
                self.d_sum[(a, b)] += f[a] * f[b];
                self.c_sum[(a, b)] += f[a] * (f[b] - self.gamma * g[b]);
            }
            self.r_sum[a] += f[a] * reward;
        }
        self.visits[s] += 1;
        self.transitions[s * n + s_next] += 1;
        self.reward_sums[s] += reward;
        self.t += 1;
        Ok(())
    }

    pub fn observe(&mut self, fm: &FeatureMap, tr: &Transition) -> Result<()> {
        self.update(fm, tr.state, tr.next_state, tr.reward)
    }

    /// `Ξ̂`: visit frequencies.
    pub fn empirical_xi(&self) -> Vector {
        let scale = self.mean_scale();
        self.visits.iter().map(|&c| c as f64 * scale).collect()
    }

    /// `P̄`: row-normalized transition counts; unvisited rows are zero.
    pub fn empirical_p(&self) -> Matrix {
        let n = self.n_states();
        let mut p = Matrix::zeros(n, n);
        for s in 0..n {
            if self.visits[s] == 0 {
                continue;
            }
            let v = self.visits[s] as f64;
            for s2 in 0..n {
                p[(s, s2)] = self.transitions[s * n + s2] as f64 / v;
            }
        }
        p
    }

    /// `r̄`: mean observed reward per state; unvisited states are zero.
    pub fn empirical_r(&self) -> Vector {
        self.visits
            .iter()
            .zip(&self.reward_sums)
            .map(|(&c, &r)| if c == 0 { 0.0 } else { r / c as f64 })
            .collect()
    }

    /// `(Φᵀ Ξ̂ Φ, Φᵀ Ξ̂ (Φ − γ P̄ Φ), Φᵀ Ξ̂ r̄)` rebuilt from counts.
    pub fn empirical_forms(&self, fm: &FeatureMap) -> Result<(Matrix, Matrix, Vector)> {
        let phi = fm.phi();
        check_len(self.n_states(), phi.rows(), "feature rows")?;
        let xi = self.empirical_xi();
        let pphi = self.empirical_p().matmul(phi)?;
        let d = super::chain::weighted_cross(phi, &xi, phi);
        let c = super::chain::weighted_cross(phi, &xi, &phi.sub(&pphi.scale(self.gamma))?);
        let r_col = Matrix::new(self.n_states(), 1, self.empirical_r())?;
        let r = super::chain::weighted_cross(phi, &xi, &r_col);
        Ok((d, c, r.values().to_vec()))
    }
}

/// Functional form of [`EstimatorState::update`].
pub fn update_estimators(
    est: &EstimatorState,
    fm: &FeatureMap,
    s: usize,
    s_next: usize,
    reward: f64,
) -> Result<EstimatorState> {
    let mut out = est.clone();
    out.update(fm, s, s_next, reward)?;
    Ok(out)
}

fn affine_residual(theta: &[f64], est: &EstimatorState) -> Result<Vector> {
    Ok(linalg::sub(&est.c_hat().mat_vec(theta)?, &est.r_hat()))
}

/// `θ − (D̂ + ridge·I)⁻¹(Ĉθ − r̂)`.
pub fn bertsekas_update(theta: &[f64], est: &EstimatorState, ridge: f64) -> Result<Vector> {
    if est.t() == 0 {
        return Err(Error::EmptyBatch);
    }
    check_len(est.feature_dim(), theta.len(), "theta")?;
    let step = linalg::solve_spd(&est.d_hat().add_diag(ridge), &affine_residual(theta, est)?)?;
    Ok(linalg::sub(theta, &step))
}

/// `Ĉθ_t − r̂ + D̂(θ − θ_t)`.
pub fn stochastic_linear_surrogate_grad(
    theta: &[f64],
    theta_t: &[f64],
    est: &EstimatorState,
) -> Result<Vector> {
    check_len(est.feature_dim(), theta.len(), "theta")?;
    check_len(est.feature_dim(), theta_t.len(), "theta_t")?;
    let quad = est.d_hat().mat_vec(&linalg::sub(theta, theta_t))?;
    Ok(linalg::add(&affine_residual(theta_t, est)?, &quad))
}

/// Plain gradient descent on the stochastic linear surrogate.
pub fn surr_gd_linear(
    theta_t: &[f64],
    est: &EstimatorState,
    inner_steps: usize,
    lr: f64,
) -> Result<Vector> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "learning rate {lr} must be positive"
        )));
    }
    check_len(est.feature_dim(), theta_t.len(), "theta_t")?;
    let d_hat = est.d_hat();
    let g0 = affine_residual(theta_t, est)?;
    let mut theta = theta_t.to_vec();
    for _ in 0..inner_steps {
        let quad = d_hat.mat_vec(&linalg::sub(&theta, theta_t))?;
        let grad = linalg::add(&g0, &quad);
        theta = linalg::axpy(&theta, -lr, &grad);
        if !linalg::all_finite(&theta) {
            return Err(Error::NumericalBlowup(
                "surrogate gradient descent diverged".into(),
            ));
        }
    }
    Ok(theta)
}

/// Settings for the linear policy-evaluation comparison between inner-loop
/// gradient descent and the exact preconditioned update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearPbeConfig {
    pub n_states: usize,
    pub hold: f64,
    pub gamma: f64,
    pub feature_dim: usize,
    pub chain_seed: u64,
    pub feature_seed: u64,
    /// Transitions folded into the estimators before the first update.
    pub warmup: usize,
    pub iterations: usize,
    pub inner_steps: Vec<usize>,
    /// Inner learning rate as a multiple of `1 / max_s ‖φ(s)‖²`.
    pub lr_scale: f64,
    pub ridge: f64,
}

impl Default for LinearPbeConfig {
    fn default() -> Self {
        Self {
            n_states: 100,
            hold: 0.95,
            gamma: 0.9,
            feature_dim: 10,
            chain_seed: 0,
            feature_seed: 1,
            warmup: 1000,
            iterations: 5000,
            inner_steps: vec![1, 5, 20],
            lr_scale: 1.0,
            ridge: 1e-6,
        }
    }
}

impl LinearPbeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_states < 2 {
            return bad("n_states must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.hold) {
            return bad(format!("hold {} not in [0, 1)", self.hold));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} not in [0, 1)", self.gamma));
        }
        if self.feature_dim == 0 || self.feature_dim > self.n_states {
            return bad("feature_dim must be in 1..=n_states".into());
        }
        if self.iterations == 0 || self.inner_steps.is_empty() {
            return bad("iterations and inner_steps must be nonempty".into());
        }
        if !(self.lr_scale > 0.0 && self.lr_scale.is_finite()) {
            return bad(format!("lr_scale {} must be positive", self.lr_scale));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge {} must be nonnegative", self.ridge));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<(MarkovChain, FeatureMap)> {
        self.validate()?;
        let mc = make_slow_mixing_chain(self.n_states, self.hold, self.gamma, self.chain_seed)?;
        let fm = FeatureMap::gaussian(self.n_states, self.feature_dim, self.feature_seed)?;
        Ok((mc, fm))
    }
}

/// `1 / max_s ‖φ(s)‖²`, an upper bound on `1/λ_max(D̂)` for any trajectory.
pub fn safe_inner_lr(fm: &FeatureMap) -> f64 {
    let m = (0..fm.phi().rows())
        .map(|s| linalg::norm_sq(fm.row(s)))
        .fold(0.0, f64::max);
    1.0 / m
}

/// One trajectory: gap `‖θ_t^{(m)} − θ_t^{B}‖` per inner-step count and
/// iteration, plus the exact iterate's distance to the fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPbeRun {
    pub seed: u64,
    pub inner_steps: Vec<usize>,
    pub gaps: Vec<Vec<f64>>,
    pub bertsekas_dist: Vec<f64>,
    pub status: RunStatus,
}

impl LinearPbeRun {
    /// Rows for one inner-step count; `dist_sq` is the squared gap.
    pub fn record(&self, k: usize) -> TrajectoryRecord {
        let m = self.inner_steps[k];
        let rows = self.gaps[k]
            .iter()
            .enumerate()
            .map(|(i, g)| TrajectoryRow {
                inner_steps: m,
                grad_evals: m,
                ..TrajectoryRow::distance_only(i + 1, g * g)
            })
            .collect();
        TrajectoryRecord {
            rows,
            initial_dist_sq: 0.0,
            thetas: Vec::new(),
            iterates: Vec::new(),
            lstars: Vec::new(),
            f_evals: 0,
            status: self.status.clone(),
        }
    }
}

fn run_sampler(mc: &MarkovChain, seed: u64) -> TrajectorySampler {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..mc.n());
    TrajectorySampler::new(start, rng.random())
}

/// The transitions consumed by one linear PBE run, warm-up included.
pub fn linear_pbe_trajectory(
    mc: &MarkovChain,
    cfg: &LinearPbeConfig,
    seed: u64,
) -> Vec<Transition> {
    let mut sampler = run_sampler(mc, seed);
    (0..cfg.warmup + cfg.iterations)
        .map(|_| sampler.next_transition(mc))
        .collect()
}

pub fn run_linear_pbe_single(
    mc: &MarkovChain,
    fm: &FeatureMap,
    cfg: &LinearPbeConfig,
    seed: u64,
) -> LinearPbeRun {
    let d = fm.dim();
    let lr = cfg.lr_scale * safe_inner_lr(fm);
    let theta_star = super::chain::exact_linear_fixed_point(mc, fm).ok();
    let mut sampler = run_sampler(mc, seed);
    let mut est = EstimatorState::new(mc.n(), d, mc.gamma());
    let mut out = LinearPbeRun {
        seed,
        inner_steps: cfg.inner_steps.clone(),
        gaps: vec![Vec::with_capacity(cfg.iterations); cfg.inner_steps.len()],
        bertsekas_dist: Vec::with_capacity(cfg.iterations),
        status: RunStatus::Completed,
    };
    let step = |est: &mut EstimatorState, sampler: &mut TrajectorySampler| {
        let tr = sampler.next_transition(mc);
        est.observe(fm, &tr)
    };
    for _ in 0..cfg.warmup {
        if let Err(e) = step(&mut est, &mut sampler) {
            out.status = RunStatus::Aborted(e);
            return out;
        }
    }
    let mut theta_b = vec![0.0; d];
    let mut theta_m = vec![vec![0.0; d]; cfg.inner_steps.len()];
    for _ in 0..cfg.iterations {
        let advanced = step(&mut est, &mut sampler).and_then(|_| {
            let next_b = bertsekas_update(&theta_b, &est, cfg.ridge)?;
            let next_m = cfg
                .inner_steps
                .iter()
                .zip(&theta_m)
                .map(|(&m, th)| surr_gd_linear(th, &est, m, lr))
                .collect::<Result<Vec<_>>>()?;
            Ok((next_b, next_m))
        });
        match advanced {
            Ok((b, m)) => {
                theta_b = b;
                theta_m = m;
            }
            Err(e) => {
                out.status = RunStatus::Aborted(e);
                return out;
            }
        }
        for (k, th) in theta_m.iter().enumerate() {
            out.gaps[k].push(linalg::dist_sq(th, &theta_b).sqrt());
        }
        out.bertsekas_dist.push(
            theta_star
                .as_ref()
                .map_or(f64::NAN, |ts| linalg::dist_sq(&theta_b, ts).sqrt()),
        );
    }
    out
}

/// Mean gap per inner-step count and iteration across the runs still alive.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPbeSummary {
    pub inner_steps: Vec<usize>,
    pub mean_gap: Vec<Vec<f64>>,
    pub runs: Vec<LinearPbeRun>,
}

pub fn run_linear_pbe(
    cfg: &LinearPbeConfig,
    runs: usize,
    master_seed: u64,
) -> Result<LinearPbeSummary> {
    let (mc, fm) = cfg.build()?;
    if runs == 0 {
        return Err(Error::InvalidConfig("need at least one run".into()));
    }
    let results: Vec<LinearPbeRun> = (0..runs as u64)
        .into_par_iter()
        .map(|i| run_linear_pbe_single(&mc, &fm, cfg, derive_seed(master_seed, i)))
        .collect();
    let mean_gap = (0..cfg.inner_steps.len())
        .map(|k| {
            (0..cfg.iterations)
                .map(|t| {
                    let alive: Vec<f64> = results
                        .iter()
                        .filter_map(|r| r.gaps[k].get(t).copied())
                        .collect();
                    alive.iter().sum::<f64>() / alive.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(LinearPbeSummary {
        inner_steps: cfg.inner_steps.clone(),
        mean_gap,
        runs: results,
    })
}
