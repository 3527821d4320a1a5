//! Experiment configurations and runners behind the command-line harness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::counterexample::{measure_alpha, run_divergence, CounterexampleSpec};
use crate::driver::{
    quasi_fejer_run, run_outer, stochastic_audit, OuterConfig, RunStatus, TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::models::{PredictionModel, ProductModel, ScalarSigmoidCelu, SoftmaxMlp};
use crate::report::{aggregate_rows, fmt_float, AggregateRow};
use crate::rl_pbe::{
    linear_pbe_trajectory, run_linear_pbe, run_nonlinear, LinearPbeConfig, NonlinearConfig,
    SyntheticMdp, TrajectorySampler,
};
use crate::seeding::derive_seed;
use crate::solvers::{InnerStrategy, SolverKind};
use crate::surrogate::LstarMode;
use crate::vi_problems::{AffineOperator, RpsOperator, VIOperator};

/// One configured experiment plus seeding and output settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub spec: ExperimentSpec,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_path: Option<String>,
}

fn default_seeds() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", content = "params", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    Counterexample(CounterexampleParams),
    Pennies(PenniesParams),
    Rps(RpsParams),
    PbeLinear(LinearPbeConfig),
    PbeNonlinear(NonlinearConfig),
    StochasticAudit(StochasticParams),
    QuasiFejer(QuasiFejerParams),
}

impl ExperimentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentSpec::Counterexample(_) => "counterexample",
            ExperimentSpec::Pennies(_) => "pennies",
            ExperimentSpec::Rps(_) => "rps",
            ExperimentSpec::PbeLinear(_) => "pbe-linear",
            ExperimentSpec::PbeNonlinear(_) => "pbe-nonlinear",
            ExperimentSpec::StochasticAudit(_) => "stochastic-audit",
            ExperimentSpec::QuasiFejer(_) => "quasi-fejer",
        }
    }
}

/// Catalogue entry for `list`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentInfo {
    pub name: &'static str,
    pub figure: &'static str,
    pub description: &'static str,
}

pub const EXPERIMENTS: [ExperimentInfo; 7] = [
    ExperimentInfo {
        name: "counterexample",
        figure: "Prop. 2",
        description: "Biased inner solver that satisfies the α-descent condition yet diverges",
    },
    ExperimentInfo {
        name: "pennies",
        figure: "Fig. 1",
        description: "Hidden matching pennies with sigmoid-CELU players",
    },
    ExperimentInfo {
        name: "rps",
        figure: "Fig. 2",
        description: "Hidden rock-paper-scissors with softmax-MLP players",
    },
    ExperimentInfo {
        name: "pbe-linear",
        figure: "Fig. 3",
        description: "Inner-loop gradient descent versus the exact preconditioned TD update",
    },
    ExperimentInfo {
        name: "pbe-nonlinear",
        figure: "Figs. 4-5",
        description: "TD(0) and surrogate methods with a value network on a Garnet MDP",
    },
    ExperimentInfo {
        name: "stochastic-audit",
        figure: "Thm. 2",
        description: "Noisy surrogate steps plateau at the predicted noise floor",
    },
    ExperimentInfo {
        name: "quasi-fejer",
        figure: "App. Prop.",
        description: "Contraction with summable versus constant injected errors",
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleParams {
    pub eta: f64,
    pub steps: usize,
    pub z0: Vec<f64>,
}

impl Default for CounterexampleParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            steps: 2000,
            z0: vec![1.0, 0.0],
        }
    }
}

/// A labelled inner strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRun {
    pub label: String,
    pub strategy: InnerStrategy,
}

impl SolverRun {
    pub fn new(label: &str, strategy: InnerStrategy) -> Self {
        Self {
            label: label.into(),
            strategy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenniesParams {
    pub eta: f64,
    pub t_outer: usize,
    pub solvers: Vec<SolverRun>,
    /// `[α₁¹, α₂¹, α₁², α₂²]`; drawn from `U[−1, 1]` per seed when absent.
    pub coefficients: Option<[f64; 4]>,
    /// Drawn from `N(0, init_std²)` per coordinate when absent.
    pub theta_init: Option<Vec<f64>>,
    pub init_std: f64,
    pub stop_below: Option<f64>,
    pub lstar_mode: LstarMode,
}

pub const PENNIES_COEFFICIENTS: [f64; 4] = [0.5, 1.0, 0.7, 1.0];
pub const PENNIES_THETA_INIT: [f64; 2] = [1.25, 2.25];

impl Default for PenniesParams {
    fn default() -> Self {
        let gd = |m| InnerStrategy::fixed(SolverKind::Gd { lr: 10.0 }, m);
        Self {
            eta: 0.01,
            t_outer: 10_000,
            solvers: vec![
                SolverRun::new("gn1", InnerStrategy::fixed(SolverKind::Gn, 1)),
                SolverRun::new(
                    "lm1",
                    InnerStrategy::fixed(SolverKind::Lm { lambda: 1e-3 }, 1),
                ),
                SolverRun::new("gd1", gd(1)),
                SolverRun::new("gd10", gd(10)),
                SolverRun::new("gd100", gd(100)),
            ],
            coefficients: Some(PENNIES_COEFFICIENTS),
            theta_init: Some(PENNIES_THETA_INIT.to_vec()),
            init_std: 4.0,
            stop_below: None,
            lstar_mode: LstarMode::Zero,
        }
    }
}

pub fn pennies_model(c: &[f64; 4]) -> ProductModel {
    ProductModel::new(vec![
        Box::new(ScalarSigmoidCelu::new(c[0], c[1])),
        Box::new(ScalarSigmoidCelu::new(c[2], c[3])),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpsParams {
    pub eta: f64,
    pub t_outer: usize,
    pub solvers: Vec<SolverRun>,
    pub lambda: f64,
    /// Drawn from `N(0, I)` when absent.
    pub theta_init: Option<Vec<f64>>,
    pub stop_below: Option<f64>,
    pub lstar_mode: LstarMode,
}

impl Default for RpsParams {
    fn default() -> Self {
        let gd = |m| InnerStrategy::fixed(SolverKind::Gd { lr: 1.0 }, m);
        Self {
            eta: 0.05,
            t_outer: 20_000,
            solvers: vec![
                SolverRun::new("gn1", InnerStrategy::fixed(SolverKind::Gn, 1)),
                SolverRun::new(
                    "lm1",
                    InnerStrategy::fixed(SolverKind::Lm { lambda: 1e-3 }, 1),
                ),
                SolverRun::new("gd1", gd(1)),
                SolverRun::new("gd10", gd(10)),
            ],
            lambda: 0.2,
            theta_init: None,
            stop_below: None,
            lstar_mode: LstarMode::Zero,
        }
    }
}

/// Two independent softmax-MLP players with `U[−1, 1]` matrices.
pub fn rps_model<R: rand::Rng + ?Sized>(rng: &mut R) -> ProductModel {
    ProductModel::new(vec![
        Box::new(SoftmaxMlp::random(rng)),
        Box::new(SoftmaxMlp::random(rng)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StochasticParams {
    pub eta: f64,
    pub alpha: f64,
    pub c: f64,
    pub sigma: f64,
    pub t_outer: usize,
    pub z0: Vec<f64>,
    pub b_matrix: Vec<Vec<f64>>,
    pub center: Vec<f64>,
}

impl Default for StochasticParams {
    fn default() -> Self {
        Self {
            eta: 0.05,
            alpha: 0.0,
            c: 2.0,
            sigma: 1.0,
            t_outer: 400,
            z0: vec![10.0, 0.0],
            b_matrix: vec![vec![1.0, 1.0], vec![-1.0, 1.0]],
            center: vec![0.0, 0.0],
        }
    }
}

impl StochasticParams {
    pub fn operator(&self) -> Result<AffineOperator> {
        if self.b_matrix.iter().any(|r| r.len() != self.b_matrix.len()) {
            return Err(Error::InvalidConfig("b_matrix must be square".into()));
        }
        AffineOperator::new(Matrix::from_rows(&self.b_matrix), self.center.clone())
    }
}

/// Injected error size per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorSchedule {
    /// `scale / t^power`.
    Summable {
        scale: f64,
        power: f64,
    },
    Constant {
        scale: f64,
    },
}

impl ErrorSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            ErrorSchedule::Summable { scale, power } => scale / (t as f64).powf(power),
            ErrorSchedule::Constant { scale } => scale,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ErrorSchedule::Summable { .. } => "summable".into(),
            ErrorSchedule::Constant { .. } => "constant".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuasiFejerParams {
    pub eta: f64,
    pub t_outer: usize,
    pub z0: Vec<f64>,
    pub schedules: Vec<ErrorSchedule>,
}

impl Default for QuasiFejerParams {
    fn default() -> Self {
        Self {
            eta: 0.01,
            t_outer: 10_000,
            z0: vec![1.0, 0.0],
            schedules: vec![
                ErrorSchedule::Summable {
                    scale: 0.5,
                    power: 2.0,
                },
                ErrorSchedule::Constant { scale: 0.5 },
            ],
        }
    }
}

/// Per-seed records for one labelled method.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub seeds: Vec<u64>,
    pub records: Vec<TrajectoryRecord>,
    pub aggregate: Vec<AggregateRow>,
}

impl Series {
    pub fn new(label: impl Into<String>, seeds: Vec<u64>, records: Vec<TrajectoryRecord>) -> Self {
        let aggregate = aggregate_rows(&records);
        Self {
            label: label.into(),
            seeds,
            records,
            aggregate,
        }
    }
}

/// Extra CSV table with preformatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub series: Vec<Series>,
    pub tables: Vec<Table>,
    pub summary: serde_json::Value,
}

impl ExperimentOutput {
    /// Runs that stopped on a numerical blowup.
    pub fn blowups(&self) -> usize {
        self.series
            .iter()
            .flat_map(|s| &s.records)
            .filter(|r| matches!(r.status, RunStatus::Aborted(Error::NumericalBlowup(_))))
            .count()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64)
            .map(|i| derive_seed(self.master_seed, i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        let pos = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        let outer = |eta: f64, t: usize, solvers: &[SolverRun]| -> Result<()> {
            if solvers.is_empty() {
                return Err(Error::InvalidConfig(
                    "at least one solver is required".into(),
                ));
            }
            for s in solvers {
                OuterConfig::new(eta, t, s.strategy).validate()?;
            }
            Ok(())
        };
        match &self.spec {
            ExperimentSpec::Counterexample(p) => {
                CounterexampleSpec::new(p.eta)?;
                if p.z0.len() != 2 || p.steps == 0 {
                    return bad("counterexample needs a 2-vector z0 and steps ≥ 1".into());
                }
            }
            ExperimentSpec::Pennies(p) => {
                outer(p.eta, p.t_outer, &p.solvers)?;
                pos("init_std", p.init_std)?;
                if p.theta_init.as_ref().is_some_and(|t| t.len() != 2) {
                    return bad("pennies theta_init must have length 2".into());
                }
            }
            ExperimentSpec::Rps(p) => {
                outer(p.eta, p.t_outer, &p.solvers)?;
                pos("lambda", p.lambda)?;
                if p.theta_init.as_ref().is_some_and(|t| t.len() != 10) {
                    return bad("rps theta_init must have length 10".into());
                }
            }
            ExperimentSpec::PbeLinear(p) => p.validate()?,
            ExperimentSpec::PbeNonlinear(p) => p.validate()?,
            ExperimentSpec::StochasticAudit(p) => {
                pos("eta", p.eta)?;
                pos("sigma", p.sigma)?;
                if p.t_outer == 0 || p.alpha < 0.0 || p.c < 0.0 {
                    return bad("stochastic audit needs t_outer ≥ 1, alpha ≥ 0, c ≥ 0".into());
                }
                let op = p.operator()?;
                if p.z0.len() != op.dim() {
                    return bad("z0 length must match the operator".into());
                }
                let mu = op.mu().unwrap_or(0.0);
                if p.alpha * p.alpha >= p.eta * mu {
                    return Err(Error::InvalidRegime(format!(
                        "α² = {} is not below ημ = {}",
                        p.alpha * p.alpha,
                        p.eta * mu
                    )));
                }
            }
            ExperimentSpec::QuasiFejer(p) => {
                pos("eta", p.eta)?;
                if p.t_outer == 0 || p.z0.len() != 2 || p.schedules.is_empty() {
                    return bad(
                        "quasi-fejer needs t_outer ≥ 1, a 2-vector z0 and a schedule".into(),
                    );
                }
                for s in &p.schedules {
                    let v = s.at(1);
                    if !(v >= 0.0 && v.is_finite()) {
                        return bad(format!("error schedule {s:?} must be nonnegative"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs every seed; output is independent of the thread count.
    pub fn run(&self) -> Result<ExperimentOutput> {
        self.validate()?;
        let seeds = self.run_seeds();
        match &self.spec {
            ExperimentSpec::Counterexample(p) => run_counterexample(p),
            ExperimentSpec::Pennies(p) => run_pennies(p, &seeds),
            ExperimentSpec::Rps(p) => run_rps(p, &seeds),
            ExperimentSpec::PbeLinear(p) => run_pbe_linear(p, self.seeds, self.master_seed),
            ExperimentSpec::PbeNonlinear(p) => run_pbe_nonlinear(p, self.seeds, self.master_seed),
            ExperimentSpec::StochasticAudit(p) => run_stochastic(p, self.seeds, self.master_seed),
            ExperimentSpec::QuasiFejer(p) => run_quasi_fejer(p, &seeds),
        }
    }
}

fn run_counterexample(p: &CounterexampleParams) -> Result<ExperimentOutput> {
    let spec = CounterexampleSpec::new(p.eta)?;
    let run = run_divergence(&spec, &p.z0, p.steps)?;
    let mut growth = Table::new("growth", &["iter", "norm", "growth_factor"]);
    for (t, n) in run.norms.iter().enumerate() {
        let g = if t == 0 { f64::NAN } else { run.growth[t - 1] };
        growth
            .rows
            .push(vec![t.to_string(), fmt_float(*n), fmt_float(g)]);
    }
    let alpha = measure_alpha(&spec, &p.z0)?;
    let summary = json!({
        "alpha_measured": alpha,
        "alpha_spec": spec.alpha,
        "expected_growth": (1.0 + p.eta * p.eta).sqrt(),
        "final_norm_ratio": run.norms.last().copied().unwrap_or(f64::NAN) / run.norms[0],
    });
    Ok(ExperimentOutput {
        series: vec![Series::new("divergence", vec![0], vec![run.record])],
        tables: vec![growth],
        summary,
    })
}

fn game_series<F>(labels: &[SolverRun], seeds: &[u64], run_one: F) -> Result<Vec<Series>>
where
    F: Fn(u64, &SolverRun) -> Result<TrajectoryRecord> + Sync,
{
    labels
        .iter()
        .map(|s| {
            let recs = seeds
                .par_iter()
                .map(|&seed| run_one(seed, s))
                .collect::<Result<Vec<_>>>()?;
            Ok(Series::new(s.label.clone(), seeds.to_vec(), recs))
        })
        .collect()
}

/// Pennies model and initial parameters for one seed.
pub fn pennies_instance(p: &PenniesParams, seed: u64) -> (ProductModel, Vector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = p.coefficients.unwrap_or_else(|| {
        let a = ScalarSigmoidCelu::random(&mut rng);
        let b = ScalarSigmoidCelu::random(&mut rng);
        [a.a1, a.a2, b.a1, b.a2]
    });
    let theta = p.theta_init.clone().unwrap_or_else(|| {
        let nd = Normal::new(0.0, p.init_std).expect("validated std");
        vec![nd.sample(&mut rng), nd.sample(&mut rng)]
    });
    (pennies_model(&coeffs), theta)
}

/// RPS model and initial parameters for one seed.
pub fn rps_instance(p: &RpsParams, seed: u64) -> (ProductModel, Vector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = rps_model(&mut rng);
    let theta = p
        .theta_init
        .clone()
        .unwrap_or_else(|| (0..10).map(|_| StandardNormal.sample(&mut rng)).collect());
    (model, theta)
}

fn outer_cfg(eta: f64, t: usize, s: &SolverRun, stop: Option<f64>, mode: LstarMode) -> OuterConfig {
    let mut cfg = OuterConfig::new(eta, t, s.strategy);
    cfg.stop_below = stop;
    cfg.lstar_mode = s.strategy.alpha_rule().map_or(mode, |r| r.lstar_mode);
    cfg
}

fn run_pennies(p: &PenniesParams, seeds: &[u64]) -> Result<ExperimentOutput> {
    let op = AffineOperator::pennies();
    let series = game_series(&p.solvers, seeds, |seed, s| {
        let (model, theta) = pennies_instance(p, seed);
        run_outer(
            &model,
            &op,
            &theta,
            &outer_cfg(p.eta, p.t_outer, s, p.stop_below, p.lstar_mode),
        )
    })?;
    Ok(game_output(series))
}

fn run_rps(p: &RpsParams, seeds: &[u64]) -> Result<ExperimentOutput> {
    let op = RpsOperator::new(crate::vi_problems::rps_payoff(), p.lambda)?;
    let series = game_series(&p.solvers, seeds, |seed, s| {
        let (model, theta) = rps_instance(p, seed);
        run_outer(
            &model,
            &op,
            &theta,
            &outer_cfg(p.eta, p.t_outer, s, p.stop_below, p.lstar_mode),
        )
    })?;
    Ok(game_output(series))
}

fn game_output(series: Vec<Series>) -> ExperimentOutput {
    let summary = series
        .iter()
        .map(|s| {
            let reached = |tol: f64| {
                s.records
                    .iter()
                    .filter(|r| r.first_below(tol).is_some())
                    .count()
            };
            (
                s.label.clone(),
                json!({
                    "runs": s.records.len(),
                    "reached_1e-6": reached(1e-6),
                    "reached_1e-8": reached(1e-8),
                    "aborted": s.records.iter().filter(|r| r.is_aborted()).count(),
                }),
            )
        })
        .collect::<serde_json::Map<_, _>>();
    ExperimentOutput {
        series,
        tables: Vec::new(),
        summary: serde_json::Value::Object(summary),
    }
}

fn run_pbe_linear(
    cfg: &LinearPbeConfig,
    runs: usize,
    master_seed: u64,
) -> Result<ExperimentOutput> {
    let summary = run_linear_pbe(cfg, runs, master_seed)?;
    let seeds: Vec<u64> = summary.runs.iter().map(|r| r.seed).collect();
    let series = cfg
        .inner_steps
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let recs = summary.runs.iter().map(|r| r.record(k)).collect();
            Series::new(format!("m{m}"), seeds.clone(), recs)
        })
        .collect();
    let mut header = vec!["iter".to_string()];
    header.extend(cfg.inner_steps.iter().map(|m| format!("mean_gap_m{m}")));
    let mut gaps = Table {
        name: "mean_gap".into(),
        header,
        rows: Vec::new(),
    };
    for t in 0..cfg.iterations {
        let mut row = vec![(t + 1).to_string()];
        row.extend(summary.mean_gap.iter().map(|g| fmt_float(g[t])));
        gaps.rows.push(row);
    }
    let (mc, fm) = cfg.build()?;
    let mut data = Table::new("dataset", &["step", "state", "reward", "next_state"]);
    for tr in linear_pbe_trajectory(&mc, cfg, seeds[0]) {
        data.rows.push(vec![
            tr.step.to_string(),
            tr.state.to_string(),
            fmt_float(tr.reward),
            tr.next_state.to_string(),
        ]);
    }
    let mixing = crate::rl_pbe::second_eigen_modulus(&mc, 20_000).unwrap_or(f64::NAN);
    let last = cfg.iterations - 1;
    let terminal: serde_json::Map<_, _> = cfg
        .inner_steps
        .iter()
        .zip(&summary.mean_gap)
        .map(|(m, g)| (format!("m{m}"), json!(g[last])))
        .collect();
    Ok(ExperimentOutput {
        series,
        tables: vec![gaps, data],
        summary: json!({
            "second_eigen_modulus": mixing,
            "inner_lr": cfg.lr_scale * crate::rl_pbe::safe_inner_lr(&fm),
            "terminal_mean_gap": terminal,
        }),
    })
}

fn run_pbe_nonlinear(
    cfg: &NonlinearConfig,
    seeds: usize,
    master_seed: u64,
) -> Result<ExperimentOutput> {
    let summary = run_nonlinear(cfg, seeds, master_seed)?;
    let seed_list: Vec<u64> = (0..seeds as u64)
        .map(|i| derive_seed(master_seed, i))
        .collect();
    let series = summary
        .methods
        .iter()
        .zip(summary.records.iter())
        .map(|(m, recs)| Series::new(m.label(), seed_list.clone(), recs.clone()))
        .collect();
    let mut test = Table::new("test_set", &["state", "mc_value"]);
    for (s, v) in summary.test_set.states.iter().zip(&summary.test_set.values) {
        test.rows.push(vec![s.to_string(), fmt_float(*v)]);
    }
    let mdp = SyntheticMdp::garnet(&cfg.mdp)?;
    let mut data = Table::new("dataset", &["step", "state", "reward", "next_state"]);
    let mut sampler = TrajectorySampler::new(0, cfg.mdp.seed);
    for _ in 0..cfg.batch_size * cfg.outer_iters.min(100) {
        let tr = sampler.next_transition(mdp.chain());
        data.rows.push(vec![
            tr.step.to_string(),
            tr.state.to_string(),
            fmt_float(tr.reward),
            tr.next_state.to_string(),
        ]);
    }
    let finals: serde_json::Map<_, _> = summary
        .methods
        .iter()
        .zip(summary.mean_error())
        .map(|(m, e)| (m.label(), json!(e.last().copied().unwrap_or(f64::NAN))))
        .collect();
    Ok(ExperimentOutput {
        series,
        tables: vec![test, data],
        summary: json!({ "final_mean_test_error": finals }),
    })
}

fn run_stochastic(
    p: &StochasticParams,
    seeds: usize,
    master_seed: u64,
) -> Result<ExperimentOutput> {
    let op = p.operator()?;
    let s = stochastic_audit(
        &op,
        p.eta,
        p.alpha,
        p.c,
        p.sigma,
        seeds,
        p.t_outer,
        &p.z0,
        master_seed,
    )?;
    let mut table = Table::new("stochastic", &["iter", "mean_half_dist_sq", "std_err"]);
    for (t, (m, e)) in s.mean_half_dist_sq.iter().zip(&s.std_err).enumerate() {
        table
            .rows
            .push(vec![t.to_string(), fmt_float(*m), fmt_float(*e)]);
    }
    let (decay, decay_se) = s.decay_mean_and_se();
    let aggregate = (1..=p.t_outer)
        .map(|t| {
            let m = 2.0 * s.mean_half_dist_sq[t];
            let h = 1.96 * 2.0 * s.std_err[t];
            AggregateRow {
                iter: t,
                mean: m,
                ci_lo: m - h,
                ci_hi: m + h,
                n_runs: seeds,
            }
        })
        .collect();
    Ok(ExperimentOutput {
        series: vec![Series {
            label: "stochastic".into(),
            seeds: Vec::new(),
            records: Vec::new(),
            aggregate,
        }],
        tables: vec![table],
        summary: json!({
            "plateau_bound": s.plateau_bound,
            "steady_state_mean": s.steady_state_mean,
            "decay_window": s.decay_window,
            "decay_factor_mean": decay,
            "decay_factor_se": decay_se,
            "stochastic_factor": s.bounds.stoch_factor,
        }),
    })
}

fn run_quasi_fejer(p: &QuasiFejerParams, seeds: &[u64]) -> Result<ExperimentOutput> {
    let op = AffineOperator::pennies();
    let series = p
        .schedules
        .iter()
        .map(|sched| {
            let recs = seeds
                .par_iter()
                .map(|&seed| quasi_fejer_run(&op, p.eta, &|t| sched.at(t), p.t_outer, &p.z0, seed))
                .collect::<Result<Vec<_>>>()?;
            Ok(Series::new(sched.label(), seeds.to_vec(), recs))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = series
        .iter()
        .map(|s| {
            let fin: Vec<f64> = s
                .records
                .iter()
                .map(|r| r.rows.last().map_or(f64::NAN, |x| x.dist_sq.sqrt()))
                .collect();
            (s.label.clone(), json!({ "final_dist": fin }))
        })
        .collect::<serde_json::Map<_, _>>();
    Ok(ExperimentOutput {
        series,
        tables: Vec::new(),
        summary: serde_json::Value::Object(summary),
    })
}

/// Defaults for every experiment, in catalogue order.
pub fn default_configs() -> Vec<ExperimentConfig> {
    let cfg = |spec, seeds| ExperimentConfig {
        spec,
        seeds,
        master_seed: 20_240_601,
        output_path: None,
    };
    vec![
        cfg(
            ExperimentSpec::Counterexample(CounterexampleParams::default()),
            1,
        ),
        cfg(ExperimentSpec::Pennies(PenniesParams::default()), 1),
        cfg(ExperimentSpec::Rps(RpsParams::default()), 100),
        cfg(ExperimentSpec::PbeLinear(LinearPbeConfig::default()), 200),
        cfg(ExperimentSpec::PbeNonlinear(NonlinearConfig::default()), 10),
        cfg(
            ExperimentSpec::StochasticAudit(StochasticParams::default()),
            1000,
        ),
        cfg(ExperimentSpec::QuasiFejer(QuasiFejerParams::default()), 1),
    ]
}

/// Model output dimension check used by configuration validation.
pub fn model_matches(model: &dyn PredictionModel, op: &dyn VIOperator) -> bool {
    model.output_dim() == op.dim()
}
