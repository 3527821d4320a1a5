use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::{FeatureMap, MarkovChain, TrajectorySampler, Transition};
use crate::driver::{RunStatus, TrajectoryRecord, TrajectoryRow};
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::models::{MlpValueNet, PredictionModel};
use crate::seeding::derive_seed;
use crate::solvers::{adamw_apply, AdamHyper, AdamState};

/// Per-state value predictions with per-state gradients.
pub trait StateValueModel: Sync {
    fn param_dim(&self) -> usize;

    fn state_value(&self, theta: &[f64], state: usize) -> Result<f64>;

    /// Adds `scale · ∇_θ V(state)` to `grad`; returns `V(state)`.
    fn accumulate_state_grad(
        &self,
        theta: &[f64],
        state: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64>;
}

impl StateValueModel for MlpValueNet {
    fn param_dim(&self) -> usize {
        PredictionModel::param_dim(self)
    }

    fn state_value(&self, theta: &[f64], state: usize) -> Result<f64> {
        self.value(theta, state)
    }

    fn accumulate_state_grad(
        &self,
        theta: &[f64],
        state: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.accumulate_grad(theta, state, scale, grad)
    }
}

impl StateValueModel for FeatureMap {
    fn param_dim(&self) -> usize {
        self.dim()
    }

    fn state_value(&self, theta: &[f64], state: usize) -> Result<f64> {
        check_len(self.dim(), theta.len(), "linear value parameters")?;
        Ok(linalg::dot(self.row(state), theta))
    }

    fn accumulate_state_grad(
        &self,
        theta: &[f64],
        state: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        check_len(self.dim(), grad.len(), "linear value gradient")?;
        for (g, &f) in grad.iter_mut().zip(self.row(state)) {
            *g += scale * f;
        }
        self.state_value(theta, state)
    }
}

/// Garnet-style generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GarnetConfig {
    pub n_states: usize,
    pub branching: usize,
    pub gamma: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for GarnetConfig {
    fn default() -> Self {
        Self {
            n_states: 50,
            branching: 5,
            gamma: 0.9,
            feature_dim: 8,
            seed: 0,
        }
    }
}

/// Random finite MDP with the evaluation policy folded into the transition
/// table, plus a Gaussian state-feature table for value networks.
#[derive(Debug, Clone)]
pub struct SyntheticMdp {
    chain: MarkovChain,
    features: Matrix,
}

impl SyntheticMdp {
    /// Each state moves to its ring successor or to `branching − 1` other
    /// distinct random states, with uniform random weights. Rewards are
    /// standard normal.
    pub fn garnet(cfg: &GarnetConfig) -> Result<Self> {
        let n = cfg.n_states;
        if n < 2 || cfg.branching == 0 || cfg.branching > n {
            return Err(Error::InvalidConfig(format!(
                "garnet needs n_states ≥ 2 and 1 ≤ branching ≤ n_states (got {n}, {})",
                cfg.branching
            )));
        }
        if cfg.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            let mut succ = vec![(i + 1) % n];
            while succ.len() < cfg.branching {
                let j = rng.random_range(0..n);
                if !succ.contains(&j) {
                    succ.push(j);
                }
            }
            let w: Vec<f64> = succ.iter().map(|_| rng.random::<f64>() + 1e-3).collect();
            let tot: f64 = w.iter().sum();
            for (&j, wj) in succ.iter().zip(&w) {
                p[(i, j)] += wj / tot;
            }
        }
        let r: Vector = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let chain = MarkovChain::new(p, r, cfg.gamma)?;
        let feats = (0..n * cfg.feature_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let features = Matrix::new(n, cfg.feature_dim, feats)?;
        Ok(Self { chain, features })
    }

    pub fn from_parts(chain: MarkovChain, features: Matrix) -> Result<Self> {
        check_len(chain.n(), features.rows(), "feature rows")?;
        Ok(Self { chain, features })
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn gamma(&self) -> f64 {
        self.chain.gamma()
    }

    pub fn n_states(&self) -> usize {
        self.chain.n()
    }

    pub fn value_net(&self, hidden: usize) -> MlpValueNet {
        MlpValueNet::new(self.features.clone(), hidden)
    }
}

/// Smallest horizon with `γ^h ≤ tol`.
pub fn horizon_for(gamma: f64, tol: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    ((tol.ln() / gamma.ln()).ceil() as usize).max(1)
}

/// Mean and standard error of discounted returns per start state.
pub fn mc_value_estimates(
    chain: &MarkovChain,
    states: &[usize],
    rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<(Vector, Vector)> {
    let gamma = chain.gamma();
    if gamma > 0.0 && gamma.powi(horizon as i32) > 1e-6 {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} too short: γ^h = {:e} > 1e-6",
            gamma.powi(horizon as i32)
        )));
    }
    if rollouts == 0 {
        return Err(Error::InvalidConfig("need at least one rollout".into()));
    }
    let mut means = Vec::with_capacity(states.len());
    let mut ses = Vec::with_capacity(states.len());
    for (k, &s0) in states.iter().enumerate() {
        if s0 >= chain.n() {
            return Err(Error::DimensionMismatch {
                expected: chain.n(),
                got: s0,
                context: "oracle state out of range",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let (mut m, mut m2) = (0.0, 0.0);
        for k in 1..=rollouts {
            let (mut s, mut disc, mut g) = (s0, 1.0, 0.0);
            for _ in 0..horizon {
                g += disc * chain.r()[s];
                disc *= gamma;
                s = chain.sample_next(s, &mut rng);
            }
            let d = g - m;
            m += d / k as f64;
            m2 += d * (g - m);
        }
        let var = if rollouts > 1 {
            m2 / (rollouts - 1) as f64
        } else {
            0.0
        };
        means.push(m);
        ses.push((var / rollouts as f64).sqrt());
    }
    Ok((means, ses))
}

/// Monte-Carlo value estimates averaged over seeded rollouts.
pub fn mc_value_oracle(
    chain: &MarkovChain,
    states: &[usize],
    rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vector> {
    mc_value_estimates(chain, states, rollouts, horizon, seed).map(|(m, _)| m)
}

/// `y_i = r_i + γ V_θ(s'_i)` with `θ` held fixed.
pub fn td_targets<M: StateValueModel + ?Sized>(
    model: &M,
    theta: &[f64],
    batch: &[Transition],
    gamma: f64,
) -> Result<Vector> {
    batch
        .iter()
        .map(|tr| Ok(tr.reward + gamma * model.state_value(theta, tr.next_state)?))
        .collect()
}

/// `((1/N) Σ δ_i², (1/N) Σ δ_i ∇V_θ(s_i))` with `δ_i = V_θ(s_i) − y_i`.
pub fn td_loss_and_direction<M: StateValueModel + ?Sized>(
    model: &M,
    theta: &[f64],
    batch: &[Transition],
    targets: &[f64],
) -> Result<(f64, Vector)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_len(batch.len(), targets.len(), "td targets")?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.param_dim()];
    let mut loss = 0.0;
    for (tr, &y) in batch.iter().zip(targets) {
        let v = model.state_value(theta, tr.state)?;
        let delta = v - y;
        loss += delta * delta;
        model.accumulate_state_grad(theta, tr.state, delta / n, &mut grad)?;
    }
    Ok((loss / n, grad))
}

/// Semi-gradient TD(0) on a batch: `θ − lr (1/N) Σ δ_i ∇V_θ(s_i)`.
pub fn td0_batch<M: StateValueModel + ?Sized>(
    model: &M,
    theta: &[f64],
    batch: &[Transition],
    gamma: f64,
    lr: f64,
) -> Result<Vector> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut step = vec![0.0; model.param_dim()];
    for tr in batch {
        let target = tr.reward + gamma * model.state_value(theta, tr.next_state)?;
        let v = model.state_value(theta, tr.state)?;
        model.accumulate_state_grad(theta, tr.state, (v - target) / n, &mut step)?;
    }
    finite(linalg::axpy(theta, -lr, &step))
}

fn finite(v: Vector) -> Result<Vector> {
    if linalg::all_finite(&v) {
        Ok(v)
    } else {
        Err(Error::NumericalBlowup(
            "value parameters became non-finite".into(),
        ))
    }
}

/// Inner optimizer for the nonlinear surrogate methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NlOptimizer {
    Gd {
        lr: f64,
    },
    #[serde(rename = "adamw")]
    AdamW(AdamHyper),
}

impl NlOptimizer {
    pub fn validate(&self) -> Result<()> {
        let lr = match self {
            NlOptimizer::Gd { lr } => *lr,
            NlOptimizer::AdamW(h) => h.lr,
        };
        if lr > 0.0 && lr.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "learning rate {lr} must be positive"
            )))
        }
    }

    /// Applies one step along `grad`; the Adam state persists across calls.
    pub fn apply(&self, theta: &[f64], grad: &[f64], state: &mut AdamState) -> Result<Vector> {
        let next = match self {
            NlOptimizer::Gd { lr } => linalg::axpy(theta, -lr, grad),
            NlOptimizer::AdamW(h) => {
                let (t, s) = adamw_apply(theta, grad, state, h);
                *state = s;
                t
            }
        };
        finite(next)
    }
}

/// Result of one outer iteration of a nonlinear surrogate method.
#[derive(Debug, Clone, PartialEq)]
pub struct NlInnerOutcome {
    pub theta: Vector,
    pub steps: usize,
    pub loss_anchor: f64,
    pub loss_final: f64,
    pub sample_grads: usize,
    pub alpha_flag: bool,
}

/// `M` inner steps on the batch mean-squared TD error with fixed targets.
pub fn alg2_inner<M: StateValueModel + ?Sized>(
    model: &M,
    theta_t: &[f64],
    batch: &[Transition],
    gamma: f64,
    steps: usize,
    opt: &NlOptimizer,
    state: &mut AdamState,
) -> Result<NlInnerOutcome> {
    let y = td_targets(model, theta_t, batch, gamma)?;
    let mut theta = theta_t.to_vec();
    let mut loss_anchor = f64::NAN;
    for m in 0..steps {
        let (loss, dir) = td_loss_and_direction(model, &theta, batch, &y)?;
        if m == 0 {
            loss_anchor = loss;
        }
        theta = opt.apply(&theta, &dir, state)?;
    }
    let (loss_final, _) = td_loss_and_direction(model, &theta, batch, &y)?;
    if steps == 0 {
        loss_anchor = loss_final;
    }
    Ok(NlInnerOutcome {
        theta,
        steps,
        loss_anchor,
        loss_final,
        sample_grads: steps * batch.len(),
        alpha_flag: false,
    })
}

/// Linearization on the fresh batch, proximity term on rotating buffer
/// batches: `L = (1/N)(Σ_i F̂_i V_θ(s_i) + ½ Σ_j (V_θ(s_j) − V_{θ_t}(s_j))²)`.
#[allow(clippy::too_many_arguments)]
pub fn alg3_double_sampling<M: StateValueModel + ?Sized>(
    model: &M,
    theta_t: &[f64],
    batch: &[Transition],
    buffer: &[Vec<Transition>],
    gamma: f64,
    steps: usize,
    opt: &NlOptimizer,
    state: &mut AdamState,
) -> Result<NlInnerOutcome> {
    if batch.is_empty() || buffer.is_empty() || buffer.iter().any(|b| b.is_empty()) {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let y = td_targets(model, theta_t, batch, gamma)?;
    let f_hat: Vector = batch
        .iter()
        .zip(&y)
        .map(|(tr, yi)| Ok(model.state_value(theta_t, tr.state)? - yi))
        .collect::<Result<_>>()?;
    let anchors: Vec<Vector> = buffer
        .iter()
        .map(|b| {
            b.iter()
                .map(|tr| model.state_value(theta_t, tr.state))
                .collect()
        })
        .collect::<Result<_>>()?;
    let surrogate = |theta: &[f64], k: usize, grad: Option<&mut Vector>| -> Result<f64> {
        let mut val = 0.0;
        let mut scratch = Vec::new();
        let g = match grad {
            Some(g) => g,
            None => {
                scratch.resize(model.param_dim(), 0.0);
                &mut scratch
            }
        };
        for ((tr, &f), &yt) in batch.iter().zip(&f_hat).zip(&y) {
            let v = model.accumulate_state_grad(theta, tr.state, f / n, g)?;
            val += f * (v - (yt + f));
        }
        for (tr, &a) in buffer[k].iter().zip(&anchors[k]) {
            let v = model.state_value(theta, tr.state)?;
            model.accumulate_state_grad(theta, tr.state, (v - a) / n, g)?;
            val += 0.5 * (v - a).powi(2);
        }
        Ok(val / n)
    };
    let k_count = buffer.len();
    let loss_anchor = surrogate(theta_t, 0, None)?;
    let mut theta = theta_t.to_vec();
    for m in 0..steps {
        let mut grad = vec![0.0; model.param_dim()];
        surrogate(&theta, m % k_count, Some(&mut grad))?;
        theta = opt.apply(&theta, &grad, state)?;
    }
    let loss_final = surrogate(&theta, steps.saturating_sub(1) % k_count, None)?;
    let per_step = batch.len() + buffer[0].len();
    Ok(NlInnerOutcome {
        theta,
        steps,
        loss_anchor,
        loss_final,
        sample_grads: steps * per_step,
        alpha_flag: false,
    })
}

/// Inner steps until `ℓ(θ^{(m)}) / ℓ(θ_t) < α²`, at most `max_inner`.
#[allow(clippy::too_many_arguments)]
pub fn alg4_thresholded<M: StateValueModel + ?Sized>(
    model: &M,
    theta_t: &[f64],
    batch: &[Transition],
    gamma: f64,
    alpha: f64,
    max_inner: usize,
    opt: &NlOptimizer,
    state: &mut AdamState,
) -> Result<NlInnerOutcome> {
    let y = td_targets(model, theta_t, batch, gamma)?;
    let (loss_anchor, mut dir) = td_loss_and_direction(model, theta_t, batch, &y)?;
    let mut theta = theta_t.to_vec();
    let mut loss = loss_anchor;
    let mut steps = 0;
    let threshold = alpha * alpha;
    let below = |l: f64| loss_anchor > 0.0 && l / loss_anchor < threshold || loss_anchor == 0.0;
    while !below(loss) && steps < max_inner {
        theta = opt.apply(&theta, &dir, state)?;
        steps += 1;
        let (l, d) = td_loss_and_direction(model, &theta, batch, &y)?;
        loss = l;
        dir = d;
    }
    Ok(NlInnerOutcome {
        theta,
        steps,
        loss_anchor,
        loss_final: loss,
        sample_grads: steps * batch.len(),
        alpha_flag: below(loss),
    })
}

/// `B̂E(θ, θ') = (1/n) Σ (v_θ(s_t) − (r_t + γ v_θ'(s_{t+1})))²`.
pub fn be_hat<M: StateValueModel + ?Sized>(
    model: &M,
    data: &[Transition],
    theta: &[f64],
    theta_target: &[f64],
    gamma: f64,
) -> Result<f64> {
    let y = td_targets(model, theta_target, data, gamma)?;
    Ok(td_loss_and_direction(model, theta, data, &y)?.0)
}

/// AdamW schedule approximating `inf_θ' B̂E(θ', θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapOracleConfig {
    pub steps: usize,
    pub lr: f64,
    /// Per-step multiplicative learning-rate annealing.
    pub decay: f64,
}

impl Default for GapOracleConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-4,
            decay: 0.995,
        }
    }
}

/// `max(0, B̂E(θ, θ) − inf_θ' B̂E(θ', θ))` with the inf from an annealed
/// AdamW run started at `θ`.
pub fn be_gap_hat<M: StateValueModel + ?Sized>(
    model: &M,
    data: &[Transition],
    theta: &[f64],
    gamma: f64,
    oracle: &GapOracleConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let y = td_targets(model, theta, data, gamma)?;
    let (at_theta, _) = td_loss_and_direction(model, theta, data, &y)?;
    let mut best = at_theta;
    let mut th = theta.to_vec();
    let mut state = AdamState::zeros(th.len());
    let mut hyper = AdamHyper {
        lr: oracle.lr,
        ..AdamHyper::default()
    };
    for _ in 0..oracle.steps {
        // The loss is (1/n)Σδ², so its gradient is twice the TD direction.
        let (l, dir) = td_loss_and_direction(model, &th, data, &y)?;
        best = best.min(l);
        let g = linalg::scale(&dir, 2.0);
        let (next, s) = adamw_apply(&th, &g, &state, &hyper);
        th = finite(next)?;
        state = s;
        hyper.lr *= oracle.decay;
    }
    best = best.min(td_loss_and_direction(model, &th, data, &y)?.0);
    Ok((at_theta - best).max(0.0))
}

/// Nonlinear policy-evaluation method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NlMethod {
    Td0,
    Inner { steps: usize },
    DoubleSampling { steps: usize, buffer_batches: usize },
    Thresholded { alpha: f64, max_inner: usize },
}

impl NlMethod {
    pub fn label(&self) -> String {
        match self {
            NlMethod::Td0 => "td0".into(),
            NlMethod::Inner { steps } => format!("inner{steps}"),
            NlMethod::DoubleSampling {
                steps,
                buffer_batches,
            } => {
                format!("double{steps}_k{buffer_batches}")
            }
            NlMethod::Thresholded { alpha, max_inner } => format!("thresh{alpha}_m{max_inner}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        match *self {
            NlMethod::Td0 => Ok(()),
            NlMethod::Inner { steps: 0 } => bad("inner steps must be positive"),
            NlMethod::DoubleSampling {
                steps,
                buffer_batches,
            } if steps == 0 || buffer_batches == 0 => {
                bad("double sampling needs positive steps and buffer size")
            }
            NlMethod::Thresholded { alpha, max_inner }
                if !(0.0..1.0).contains(&alpha) || max_inner == 0 =>
            {
                bad("thresholded method needs alpha in [0, 1) and positive max_inner")
            }
            _ => Ok(()),
        }
    }
}

/// Settings for one online nonlinear policy-evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearConfig {
    pub mdp: GarnetConfig,
    pub hidden: usize,
    pub batch_size: usize,
    pub outer_iters: usize,
    pub methods: Vec<NlMethod>,
    pub optimizer: NlOptimizer,
    pub test_states: usize,
    pub mc_rollouts: usize,
    pub oracle_seed: u64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            mdp: GarnetConfig::default(),
            hidden: crate::models::DEFAULT_HIDDEN_WIDTH,
            batch_size: 32,
            outer_iters: 300,
            methods: vec![NlMethod::Td0, NlMethod::Inner { steps: 10 }],
            optimizer: NlOptimizer::Gd { lr: 0.05 },
            test_states: 100,
            mc_rollouts: 100,
            oracle_seed: 7,
        }
    }
}

impl NonlinearConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0..1.0).contains(&self.mdp.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if self.hidden == 0 || self.batch_size == 0 || self.outer_iters == 0 {
            return bad("hidden, batch_size and outer_iters must be positive");
        }
        if self.test_states == 0 || self.mc_rollouts == 0 {
            return bad("test_states and mc_rollouts must be positive");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        self.methods.iter().try_for_each(NlMethod::validate)?;
        self.optimizer.validate()
    }
}

/// States visited by the reference policy with Monte-Carlo value labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub states: Vec<usize>,
    pub values: Vector,
}

impl TestSet {
    /// Every tenth state of a seeded trajectory, labelled by rollouts.
    pub fn sample(mdp: &SyntheticMdp, count: usize, rollouts: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sampler = TrajectorySampler::new(rng.random_range(0..mdp.n_states()), rng.random());
        let states: Vec<usize> = (0..count * 10)
            .map(|_| sampler.next_transition(mdp.chain()).state)
            .step_by(10)
            .collect();
        let horizon = horizon_for(mdp.gamma(), 1e-6);
        let values = mc_value_oracle(
            mdp.chain(),
            &states,
            rollouts,
            horizon,
            derive_seed(seed, 1),
        )?;
        Ok(Self { states, values })
    }

    /// Mean squared value-prediction error.
    pub fn error<M: StateValueModel + ?Sized>(&self, model: &M, theta: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (&s, &v) in self.states.iter().zip(&self.values) {
            acc += (model.state_value(theta, s)? - v).powi(2);
        }
        Ok(acc / self.states.len() as f64)
    }
}

/// Streams consecutive batches of one trajectory.
#[derive(Debug, Clone)]
pub struct BatchStream {
    sampler: TrajectorySampler,
}

impl BatchStream {
    pub fn new(start_state: usize, seed: u64) -> Self {
        Self {
            sampler: TrajectorySampler::new(start_state, seed),
        }
    }

    pub fn next_batch(&mut self, chain: &MarkovChain, size: usize) -> Vec<Transition> {
        (0..size)
            .map(|_| self.sampler.next_transition(chain))
            .collect()
    }
}

/// One online run; `dist_sq` holds the test-set value-prediction error.
/// Runs with equal seeds share the initialization and the data stream.
pub fn run_nonlinear_method(
    mdp: &SyntheticMdp,
    model: &MlpValueNet,
    cfg: &NonlinearConfig,
    method: &NlMethod,
    test: &TestSet,
    seed: u64,
) -> TrajectoryRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = model.init_params(&mut rng);
    let mut stream = BatchStream::new(rng.random_range(0..mdp.n_states()), rng.random());
    let gamma = mdp.gamma();
    let mut state = AdamState::zeros(theta.len());
    let mut rec = TrajectoryRecord {
        rows: Vec::with_capacity(cfg.outer_iters),
        initial_dist_sq: test.error(model, &theta).unwrap_or(f64::NAN),
        thetas: Vec::new(),
        iterates: Vec::new(),
        lstars: Vec::new(),
        f_evals: 0,
        status: RunStatus::Completed,
    };
    let buffer: Vec<Vec<Transition>> = match method {
        NlMethod::DoubleSampling { buffer_batches, .. } => (0..*buffer_batches)
            .map(|_| stream.next_batch(mdp.chain(), cfg.batch_size))
            .collect(),
        _ => Vec::new(),
    };
    for t in 1..=cfg.outer_iters {
        let batch = stream.next_batch(mdp.chain(), cfg.batch_size);
        let out = match *method {
            NlMethod::Td0 => {
                alg2_inner(model, &theta, &batch, gamma, 1, &cfg.optimizer, &mut state)
            }
            NlMethod::Inner { steps } => alg2_inner(
                model,
                &theta,
                &batch,
                gamma,
                steps,
                &cfg.optimizer,
                &mut state,
            ),
            NlMethod::DoubleSampling { steps, .. } => alg3_double_sampling(
                model,
                &theta,
                &batch,
                &buffer,
                gamma,
                steps,
                &cfg.optimizer,
                &mut state,
            ),
            NlMethod::Thresholded { alpha, max_inner } => alg4_thresholded(
                model,
                &theta,
                &batch,
                gamma,
                alpha,
                max_inner,
                &cfg.optimizer,
                &mut state,
            ),
        };
        let out = match out.and_then(|o| test.error(model, &o.theta).map(|e| (o, e))) {
            Ok(v) => v,
            Err(e) => {
                rec.status = RunStatus::Aborted(e);
                return rec;
            }
        };
        let (o, err) = out;
        rec.f_evals += batch.len();
        rec.rows.push(TrajectoryRow {
            iter: t,
            dist_sq: err,
            loss_anchor: o.loss_anchor,
            loss_final: o.loss_final,
            loss_ratio: if o.loss_anchor > 0.0 {
                o.loss_final / o.loss_anchor
            } else {
                0.0
            },
            inner_steps: o.steps,
            grad_evals: o.sample_grads,
            alpha_flag: o.alpha_flag,
            wall_ms: 0.0,
        });
        theta = o.theta;
    }
    rec.thetas.push(theta);
    rec
}

/// Per-method records across seeds, in seed order.
#[derive(Debug, Clone)]
pub struct NonlinearSummary {
    pub methods: Vec<NlMethod>,
    pub records: Vec<Vec<TrajectoryRecord>>,
    pub test_set: TestSet,
}

impl NonlinearSummary {
    /// Mean test error per method and iteration.
    pub fn mean_error(&self) -> Vec<Vector> {
        self.records
            .iter()
            .map(|runs| {
                let len = runs.iter().map(|r| r.rows.len()).min().unwrap_or(0);
                (0..len)
                    .map(|t| {
                        runs.iter().map(|r| r.rows[t].dist_sq).sum::<f64>() / runs.len() as f64
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn run_nonlinear(
    cfg: &NonlinearConfig,
    seeds: usize,
    master_seed: u64,
) -> Result<NonlinearSummary> {
    cfg.validate()?;
    if seeds == 0 {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let mdp = SyntheticMdp::garnet(&cfg.mdp)?;
    let model = mdp.value_net(cfg.hidden);
    let test = TestSet::sample(&mdp, cfg.test_states, cfg.mc_rollouts, cfg.oracle_seed)?;
    let records = cfg
        .methods
        .iter()
        .map(|m| {
            (0..seeds as u64)
                .into_par_iter()
                .map(|i| {
                    run_nonlinear_method(&mdp, &model, cfg, m, &test, derive_seed(master_seed, i))
                })
                .collect()
        })
        .collect();
    Ok(NonlinearSummary {
        methods: cfg.methods.clone(),
        records,
        test_set: test,
    })
}

#[cfg(test)]
mod tests {
    use super::super::chain::simulate_trajectory;
    use super::super::estimators::EstimatorState;
    use super::*;

    fn small_mdp() -> SyntheticMdp {
        SyntheticMdp::garnet(&GarnetConfig {
            n_states: 12,
            branching: 3,
            gamma: 0.8,
            feature_dim: 4,
            seed: 3,
        })
        .unwrap()
    }

    fn data(mdp: &SyntheticMdp, len: usize, seed: u64) -> Vec<Transition> {
        simulate_trajectory(mdp.chain(), 0, len, seed).unwrap()
    }

    #[test]
    fn garnet_rows_are_stochastic_with_branching() {
        let mdp = SyntheticMdp::garnet(&GarnetConfig::default()).unwrap();
        let p = mdp.chain().p();
        for i in 0..50 {
            let row = p.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert_eq!(row.iter().filter(|&&v| v > 0.0).count(), 5);
            assert!(row[(i + 1) % 50] > 0.0);
        }
        assert!(SyntheticMdp::garnet(&GarnetConfig {
            branching: 0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn td0_oracle_matches_jacobian_form() {
        let mdp = small_mdp();
        let net = mdp.value_net(6);
        let theta = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let batch = data(&mdp, 20, 4);
        let lr = 0.1;
        let got = td0_batch(&net, &theta, &batch, 0.8, lr).unwrap();
        let v = net.forward(&theta).unwrap();
        let j = net.jacobian(&theta).unwrap();
        let mut expect = theta.clone();
        for tr in &batch {
            let delta = v[tr.state] - (tr.reward + 0.8 * v[tr.next_state]);
            for k in 0..theta.len() {
                expect[k] -= lr * delta * j[(tr.state, k)] / batch.len() as f64;
            }
        }
        for k in 0..theta.len() {
            assert!((got[k] - expect[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn alg2_single_step_is_td0() {
        let mdp = small_mdp();
        let net = mdp.value_net(6);
        let mut theta = net.init_params(&mut ChaCha8Rng::seed_from_u64(2));
        let mut stream = BatchStream::new(0, 9);
        let opt = NlOptimizer::Gd { lr: 0.05 };
        let mut st = AdamState::zeros(theta.len());
        for _ in 0..25 {
            let batch = stream.next_batch(mdp.chain(), 8);
            let a = alg2_inner(&net, &theta, &batch, 0.8, 1, &opt, &mut st).unwrap();
            let b = td0_batch(&net, &theta, &batch, 0.8, 0.05).unwrap();
            for (x, y) in a.theta.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12);
            }
            theta = a.theta;
        }
    }

    #[test]
    fn double_sampling_with_same_batch_recombines() {
        let mdp = small_mdp();
        let net = mdp.value_net(5);
        let theta = net.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        let batch = data(&mdp, 16, 5);
        let opt = NlOptimizer::Gd { lr: 0.1 };
        let mut s1 = AdamState::zeros(theta.len());
        let mut s2 = AdamState::zeros(theta.len());
        let a = alg2_inner(&net, &theta, &batch, 0.8, 4, &opt, &mut s1).unwrap();
        let b = alg3_double_sampling(
            &net,
            &theta,
            &batch,
            std::slice::from_ref(&batch),
            0.8,
            4,
            &opt,
            &mut s2,
        )
        .unwrap();
        for k in 0..theta.len() {
            assert!((a.theta[k] - b.theta[k]).abs() <= 1e-12);
        }
        let empty: Vec<Vec<Transition>> = vec![Vec::new()];
        assert_eq!(
            alg3_double_sampling(&net, &theta, &batch, &empty, 0.8, 1, &opt, &mut s2),
            Err(Error::EmptyBatch)
        );
    }

    #[test]
    fn thresholded_with_zero_alpha_runs_to_cap() {
        let mdp = small_mdp();
        let net = mdp.value_net(5);
        let theta = net.init_params(&mut ChaCha8Rng::seed_from_u64(4));
        let batch = data(&mdp, 16, 6);
        let opt = NlOptimizer::Gd { lr: 0.05 };
        let mut st = AdamState::zeros(theta.len());
        let out = alg4_thresholded(&net, &theta, &batch, 0.8, 0.0, 7, &opt, &mut st).unwrap();
        assert_eq!(out.steps, 7);
        assert!(!out.alpha_flag);
        let mut st = AdamState::zeros(theta.len());
        let lax = alg4_thresholded(&net, &theta, &batch, 0.8, 0.999, 50, &opt, &mut st).unwrap();
        assert!(lax.steps >= 1 && lax.steps < 50 && lax.alpha_flag);
        assert!(lax.loss_final / lax.loss_anchor < 0.999f64.powi(2));
    }

    #[test]
    fn empty_batches_are_rejected() {
        let mdp = small_mdp();
        let net = mdp.value_net(3);
        let theta = vec![0.0; PredictionModel::param_dim(&net)];
        let opt = NlOptimizer::Gd { lr: 0.1 };
        let mut st = AdamState::zeros(theta.len());
        assert_eq!(
            td0_batch(&net, &theta, &[], 0.8, 0.1),
            Err(Error::EmptyBatch)
        );
        assert_eq!(
            alg2_inner(&net, &theta, &[], 0.8, 2, &opt, &mut st),
            Err(Error::EmptyBatch)
        );
        assert_eq!(
            be_gap_hat(&net, &[], &theta, 0.8, &GapOracleConfig::default()),
            Err(Error::EmptyBatch)
        );
    }

    #[test]
    fn divergent_gd_reports_blowup() {
        let mdp = small_mdp();
        let fm = FeatureMap::new(mdp.features().scale(50.0)).unwrap();
        let batch = data(&mdp, 32, 1);
        let opt = NlOptimizer::Gd { lr: 10.0 };
        let mut st = AdamState::zeros(4);
        let r = alg2_inner(&fm, &[1.0; 4], &batch, 0.8, 400, &opt, &mut st);
        assert!(matches!(r, Err(Error::NumericalBlowup(_))));
    }

    #[test]
    fn tabular_fixed_point_has_zero_gap() {
        let mdp = small_mdp();
        let n = mdp.n_states();
        let fm = FeatureMap::new(Matrix::identity(n)).unwrap();
        let batch = data(&mdp, 2000, 8);
        let mut est = EstimatorState::new(n, n, mdp.gamma());
        for tr in &batch {
            est.observe(&fm, tr).unwrap();
        }
        // Unvisited states get a unit diagonal so the system stays solvable.
        let mut c = est.c_hat();
        for s in 0..n {
            if est.visit_counts()[s] == 0 {
                c[(s, s)] = 1.0;
            }
        }
        let theta = linalg::solve_lu(&c, &est.r_hat()).unwrap();
        let gap = be_gap_hat(
            &fm,
            &batch,
            &theta,
            mdp.gamma(),
            &GapOracleConfig::default(),
        )
        .unwrap();
        assert!(gap <= 1e-6, "{gap}");
    }

    #[test]
    fn linear_gap_matches_least_squares_inf() {
        let mdp = small_mdp();
        let fm = FeatureMap::new(mdp.features().clone()).unwrap();
        let batch = data(&mdp, 400, 2);
        let theta = vec![0.3, -0.2, 0.5, 0.1];
        let y = td_targets(&fm, &theta, &batch, mdp.gamma()).unwrap();
        let rows: Vec<Vec<f64>> = batch.iter().map(|tr| fm.row(tr.state).to_vec()).collect();
        let a = Matrix::from_rows(&rows);
        let best = linalg::pinv_solve(&a, &y, 1e-12).unwrap();
        let inf = be_hat(&fm, &batch, &best, &theta, mdp.gamma()).unwrap();
        let exact = be_hat(&fm, &batch, &theta, &theta, mdp.gamma()).unwrap() - inf;
        let oracle = GapOracleConfig {
            steps: 4000,
            lr: 0.05,
            decay: 0.999,
        };
        let gap = be_gap_hat(&fm, &batch, &theta, mdp.gamma(), &oracle).unwrap();
        assert!((gap - exact).abs() <= 1e-4, "{gap} vs {exact}");
        let default_gap = be_gap_hat(
            &fm,
            &batch,
            &theta,
            mdp.gamma(),
            &GapOracleConfig::default(),
        )
        .unwrap();
        assert!(default_gap >= 0.0 && default_gap <= exact + 1e-12);
    }

    #[test]
    fn horizon_meets_tolerance() {
        for g in [0.5, 0.9, 0.99] {
            let h = horizon_for(g, 1e-6);
            assert!(g.powi(h as i32) <= 1e-6 && g.powi(h as i32 - 1) > 1e-6);
        }
        assert_eq!(horizon_for(0.0, 1e-6), 1);
    }

    #[test]
    fn mc_oracle_geometric_and_myopic() {
        let loop_chain = MarkovChain::new(Matrix::identity(1), vec![1.0], 0.9).unwrap();
        let h = horizon_for(0.9, 1e-6);
        let v = mc_value_oracle(&loop_chain, &[0], 5, h, 1).unwrap();
        assert!((v[0] - (1.0 - 0.9f64.powi(h as i32)) / 0.1).abs() <= 1e-9);
        let mdp = small_mdp();
        let myopic =
            MarkovChain::new(mdp.chain().p().clone(), mdp.chain().r().to_vec(), 0.0).unwrap();
        let states: Vec<usize> = (0..12).collect();
        let v0 = mc_value_oracle(&myopic, &states, 3, 1, 2).unwrap();
        assert_eq!(v0, mdp.chain().r().to_vec());
        assert!(mc_value_oracle(mdp.chain(), &states, 10, 3, 0).is_err());
    }

    #[test]
    fn mc_oracle_agrees_with_direct_solve() {
        let mdp = small_mdp();
        let states: Vec<usize> = (0..12).collect();
        let h = horizon_for(mdp.gamma(), 1e-6);
        let (m, se) = mc_value_estimates(mdp.chain(), &states, 2000, h, 5).unwrap();
        let exact = mdp.chain().true_values().unwrap();
        let within = (0..12)
            .filter(|&s| (m[s] - exact[s]).abs() <= 3.0 * se[s])
            .count();
        assert!(within >= 11, "{within}");
    }

    #[test]
    fn adamw_inner_runs_and_is_deterministic() {
        let cfg = NonlinearConfig {
            mdp: GarnetConfig {
                n_states: 12,
                ..Default::default()
            },
            hidden: 4,
            batch_size: 8,
            outer_iters: 5,
            methods: vec![
                NlMethod::Td0,
                NlMethod::DoubleSampling {
                    steps: 3,
                    buffer_batches: 2,
                },
                NlMethod::Thresholded {
                    alpha: 0.5,
                    max_inner: 5,
                },
            ],
            optimizer: NlOptimizer::AdamW(AdamHyper::default()),
            test_states: 5,
            mc_rollouts: 10,
            oracle_seed: 1,
        };
        let a = run_nonlinear(&cfg, 2, 3).unwrap();
        let b = run_nonlinear(&cfg, 2, 3).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.mean_error()[1].len(), 5);
        let bad = NonlinearConfig {
            methods: vec![NlMethod::Inner { steps: 0 }],
            ..cfg
        };
        assert!(matches!(
            run_nonlinear(&bad, 1, 0),
            Err(Error::InvalidConfig(_))
        ));
    }
}
