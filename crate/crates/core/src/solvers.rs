//! Inner-loop optimizers over a surrogate and the α-rule runner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vector, DEFAULT_RANK_TOL};
use crate::surrogate::{alpha_satisfied, AlphaRule, Objective, SurrogateLoss};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vector,
    pub v: Vector,
    pub step_count: u64,
}

impl AdamState {
    pub fn zeros(d: usize) -> Self {
        Self {
            m: vec![0.0; d],
            v: vec![0.0; d],
            step_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverKind {
    Gd {
        lr: f64,
    },
    Gn,
    Dgn {
        eta_gn: f64,
    },
    Lm {
        lambda: f64,
    },
    #[serde(rename = "adamw")]
    AdamW(AdamHyper),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    FixedSteps(usize),
    Alpha(AlphaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerStrategy {
    pub kind: SolverKind,
    pub stop: StopRule,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

impl InnerStrategy {
    pub fn new(kind: SolverKind, stop: StopRule) -> Self {
        Self {
            kind,
            stop,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }

    pub fn fixed(kind: SolverKind, steps: usize) -> Self {
        Self::new(kind, StopRule::FixedSteps(steps))
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        match self.kind {
            SolverKind::Gd { lr } if !(lr > 0.0) => return bad("gd lr must be > 0"),
            SolverKind::Dgn { eta_gn } if !(eta_gn > 0.0 && eta_gn <= 1.0) => {
                return bad("eta_gn must lie in (0, 1]")
            }
            SolverKind::Lm { lambda } if !(lambda > 0.0) => return bad("lm lambda must be > 0"),
            SolverKind::AdamW(h) => {
                if !(h.lr > 0.0) {
                    return bad("adamw lr must be > 0");
                }
                if !(0.0..1.0).contains(&h.beta1) || !(0.0..1.0).contains(&h.beta2) {
                    return bad("adamw betas must lie in [0, 1)");
                }
                if !(h.eps > 0.0) || h.weight_decay < 0.0 {
                    return bad("adamw eps must be > 0 and weight decay ≥ 0");
                }
            }
            _ => {}
        }
        match self.stop {
            StopRule::FixedSteps(0) => bad("fixed step count must be ≥ 1"),
            StopRule::Alpha(rule) => rule.validate(),
            _ => Ok(()),
        }
    }

    pub fn alpha_rule(&self) -> Option<AlphaRule> {
        match self.stop {
            StopRule::Alpha(r) => Some(r),
            StopRule::FixedSteps(_) => None,
        }
    }
}

fn finite_or_blowup(v: Vector, what: &str) -> Result<Vector> {
    if linalg::all_finite(&v) {
        Ok(v)
    } else {
        Err(Error::NumericalBlowup(format!("non-finite {what}")))
    }
}

/// `θ − lr·∇ℓ(θ)`.
pub fn gd_step<O: Objective + ?Sized>(s: &O, theta: &[f64], lr: f64) -> Result<Vector> {
    let g = finite_or_blowup(s.gradient(theta)?, "gradient")?;
    Ok(linalg::axpy(theta, -lr, &g))
}

fn gn_direction(s: &SurrogateLoss<'_>, theta: &[f64], tol: f64) -> Result<Vector> {
    let j = s.residual_jacobian(theta)?;
    let r = s.residual(theta)?;
    finite_or_blowup(linalg::pinv_solve(&j, &r, tol)?, "Gauss-Newton direction")
}

/// `θ − (DgᵀDg)^† Dgᵀ r(θ)`.
pub fn gn_step(s: &SurrogateLoss<'_>, theta: &[f64], tol: f64) -> Result<Vector> {
    dgn_step(s, theta, 1.0, tol)
}

pub fn dgn_step(s: &SurrogateLoss<'_>, theta: &[f64], eta_gn: f64, tol: f64) -> Result<Vector> {
    let dir = gn_direction(s, theta, tol)?;
    Ok(linalg::axpy(theta, -eta_gn, &dir))
}

/// `θ − (DgᵀDg + λI)⁻¹ Dgᵀ r(θ)`.
pub fn lm_step(s: &SurrogateLoss<'_>, theta: &[f64], lambda: f64) -> Result<Vector> {
    let j = s.residual_jacobian(theta)?;
    let r = s.residual(theta)?;
    let rhs = j.tr_mat_vec(&r)?;
    let dir = linalg::solve_spd(&j.gram().add_diag(lambda), &rhs)?;
    Ok(linalg::axpy(
        theta,
        -1.0,
        &finite_or_blowup(dir, "Levenberg-Marquardt direction")?,
    ))
}

/// One AdamW step with decoupled weight decay.
pub fn adamw_step<O: Objective + ?Sized>(
    s: &O,
    theta: &[f64],
    state: &AdamState,
    hyper: &AdamHyper,
) -> Result<(Vector, AdamState)> {
    if state.m.len() != theta.len() || state.v.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: state.m.len(),
            context: "adam state",
        });
    }
    let g = finite_or_blowup(s.gradient(theta)?, "gradient")?;
    Ok(adamw_apply(theta, &g, state, hyper))
}

/// AdamW update from a precomputed gradient.
pub fn adamw_apply(
    theta: &[f64],
    g: &[f64],
    state: &AdamState,
    h: &AdamHyper,
) -> (Vector, AdamState) {
    let t = state.step_count + 1;
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);
    let mut next = AdamState {
        m: Vec::with_capacity(theta.len()),
        v: Vec::with_capacity(theta.len()),
        step_count: t,
    };
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let m = h.beta1 * state.m[i] + (1.0 - h.beta1) * g[i];
        let v = h.beta2 * state.v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let decayed = theta[i] - h.lr * h.weight_decay * theta[i];
        out.push(decayed - h.lr * (m / bc1) / ((v / bc2).sqrt() + h.eps));
        next.m.push(m);
        next.v.push(v);
    }
    (out, next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutcome {
    pub theta: Vector,
    pub steps: usize,
    pub final_loss: f64,
    /// Gradient or Jacobian evaluations spent.
    pub grad_evals: usize,
    /// The α-rule cap was reached without satisfying the rule.
    pub cap_hit: bool,
}

fn second_order<'o, O: Objective + ?Sized>(s: &'o O) -> Result<&'o SurrogateLoss<'o>> {
    s.least_squares().ok_or_else(|| {
        Error::InvalidConfig("second-order solvers need a deterministic surrogate".into())
    })
}

/// Runs the inner optimizer from `theta_start` until the stop rule fires.
pub fn run_inner<O: Objective + ?Sized>(
    s: &O,
    theta_start: &[f64],
    strategy: &InnerStrategy,
    lstar: f64,
    loss_anchor: f64,
) -> Result<InnerOutcome> {
    let max_steps = match strategy.stop {
        StopRule::FixedSteps(m) => m,
        StopRule::Alpha(rule) => rule.max_inner,
    };
    let mut theta = theta_start.to_vec();
    let mut adam = AdamState::zeros(theta.len());
    let mut steps = 0;
    let mut loss = loss_anchor;
    let mut satisfied = false;
    while steps < max_steps {
        theta = match strategy.kind {
            SolverKind::Gd { lr } => gd_step(s, &theta, lr)?,
            SolverKind::Gn => gn_step(second_order(s)?, &theta, strategy.rank_tol)?,
            SolverKind::Dgn { eta_gn } => {
                dgn_step(second_order(s)?, &theta, eta_gn, strategy.rank_tol)?
            }
            SolverKind::Lm { lambda } => lm_step(second_order(s)?, &theta, lambda)?,
            SolverKind::AdamW(h) => {
                let (next, st) = adamw_step(s, &theta, &adam, &h)?;
                adam = st;
                next
            }
        };
        steps += 1;
        if let StopRule::Alpha(rule) = strategy.stop {
            loss = s.value(&theta)?;
            if alpha_satisfied(&rule, loss, loss_anchor, lstar) {
                satisfied = true;
                break;
            }
        }
    }
    if matches!(strategy.stop, StopRule::FixedSteps(_)) {
        loss = s.value(&theta)?;
    }
    if !loss.is_finite() {
        return Err(Error::NumericalBlowup("non-finite surrogate loss".into()));
    }
    Ok(InnerOutcome {
        theta,
        steps,
        final_loss: loss,
        grad_evals: steps,
        cap_hit: matches!(strategy.stop, StopRule::Alpha(_)) && !satisfied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::models::{LinearModel, PredictionModel, ProductModel, ScalarSigmoidCelu};
    use crate::surrogate::{build_surrogate, LstarMode};
    use crate::vi_problems::{AffineOperator, VIOperator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_setup() -> LinearModel {
        LinearModel::new(Matrix::identity(2))
    }

    fn pennies_model() -> ProductModel {
        ProductModel::new(vec![
            Box::new(ScalarSigmoidCelu::new(0.5, 1.0)),
            Box::new(ScalarSigmoidCelu::new(0.7, 1.0)),
        ])
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn gd_examples() {
        let m = identity_setup();
        let s = build_surrogate(&m, &[0.0, 0.0], &[1.0, 0.0], 0.5, None).unwrap();
        assert_eq!(gd_step(&s, &[0.0, 0.0], 1.0).unwrap(), vec![-0.5, 0.0]);
        assert_eq!(gd_step(&s, &[0.0, 0.0], 0.5).unwrap(), vec![-0.25, 0.0]);
        let fixed = gd_step(&s, &[-0.5, 0.0], 0.7).unwrap();
        assert!(close(&fixed, &[-0.5, 0.0], 1e-12));
    }

    #[test]
    fn gn_on_linear_model_is_exact() {
        let phi = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 2.0], vec![1.0, -1.0]]);
        let m = LinearModel::new(phi);
        let s = build_surrogate(&m, &[0.3, 0.1], &[1.0, 2.0, -0.5], 0.4, None).unwrap();
        let th = gn_step(&s, &[0.3, 0.1], DEFAULT_RANK_TOL).unwrap();
        assert!(linalg::norm(&s.gradient(&th).unwrap()) <= 1e-10);
    }

    #[test]
    fn gn_matches_phgd_formula_on_pennies() {
        let model = pennies_model();
        let op = AffineOperator::pennies();
        let theta = [1.25, 2.25];
        let z = model.forward(&theta).unwrap();
        let f = op.eval(&z).unwrap();
        let s = build_surrogate(&model, &theta, &f, 0.1, None).unwrap();
        let gn = gn_step(&s, &theta, DEFAULT_RANK_TOL).unwrap();
        // diagonal Jacobian: (DgᵀDg)^† Dgᵀ F = F_i / J_ii
        let j = model.jacobian(&theta).unwrap();
        let phgd = [
            theta[0] - 0.1 * f[0] / j[(0, 0)],
            theta[1] - 0.1 * f[1] / j[(1, 1)],
        ];
        assert!(close(&gn, &phgd, 1e-12));
    }

    #[test]
    fn gn_with_zero_residual_is_stationary() {
        let m = ScalarSigmoidCelu::new(0.5, 1.0);
        let s = build_surrogate(&m, &[0.4], &[0.0], 0.1, None).unwrap();
        assert_eq!(gn_step(&s, &[0.4], DEFAULT_RANK_TOL).unwrap(), vec![0.4]);
    }

    #[test]
    fn dgn_examples() {
        let model = pennies_model();
        let s = build_surrogate(&model, &[1.25, 2.25], &[0.3, -0.2], 0.1, None).unwrap();
        let a = gn_step(&s, &[0.9, 1.1], DEFAULT_RANK_TOL).unwrap();
        let b = dgn_step(&s, &[0.9, 1.1], 1.0, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let m = identity_setup();
        let s = build_surrogate(&m, &[0.0, 0.0], &[1.0, 0.0], 0.5, None).unwrap();
        assert_eq!(
            dgn_step(&s, &[0.0, 0.0], 0.5, DEFAULT_RANK_TOL).unwrap(),
            vec![-0.25, 0.0]
        );
    }

    #[test]
    fn dgn_direction_is_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let a: Vec<(f64, f64)> = (0..2)
                .map(|_| (rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)))
                .collect();
            let model = ProductModel::new(
                a.iter()
                    .map(|&(a1, a2)| {
                        Box::new(ScalarSigmoidCelu::new(a1, a2)) as Box<dyn PredictionModel>
                    })
                    .collect(),
            );
            let theta: Vector = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f: Vector = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = build_surrogate(&model, &theta, &f, 0.3, None).unwrap();
            let probe: Vector = theta
                .iter()
                .map(|t| t + rng.random_range(-0.5..0.5))
                .collect();
            let dir = linalg::sub(
                &probe,
                &dgn_step(&s, &probe, 1.0, DEFAULT_RANK_TOL).unwrap(),
            );
            let slope = -linalg::dot(&s.gradient(&probe).unwrap(), &dir);
            assert!(slope < 0.0);
            let next = dgn_step(&s, &probe, 1e-3, DEFAULT_RANK_TOL).unwrap();
            assert!(s.value(&next).unwrap() < s.value(&probe).unwrap());
        }
    }

    #[test]
    fn lm_examples() {
        let m = identity_setup();
        let s = build_surrogate(&m, &[0.0, 0.0], &[2.0, 0.0], 0.5, None).unwrap();
        assert!(close(
            &lm_step(&s, &[0.0, 0.0], 1.0).unwrap(),
            &[-0.5, 0.0],
            1e-15
        ));

        let phi = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.2, 2.0], vec![1.0, -1.0]]);
        let lin = LinearModel::new(phi);
        let s = build_surrogate(&lin, &[0.3, 0.1], &[1.0, 2.0, -0.5], 0.4, None).unwrap();
        let th = [0.3, 0.1];
        let big = lm_step(&s, &th, 1e6).unwrap();
        let gd = gd_step(&s, &th, 1e-6).unwrap();
        let (db, dg) = (linalg::sub(&big, &th), linalg::sub(&gd, &th));
        assert!(linalg::norm(&linalg::sub(&big, &gd)) <= 1e-8 * linalg::norm(&gd));
        assert!(linalg::norm(&linalg::sub(&db, &dg)) / linalg::norm(&dg) <= 1e-5);
        let small = lm_step(&s, &th, 1e-10).unwrap();
        let gn = gn_step(&s, &th, DEFAULT_RANK_TOL).unwrap();
        assert!(close(&small, &gn, 1e-6));
        let mid = lm_step(&s, &th, 1.0).unwrap();
        let step = |x: &[f64]| linalg::norm(&linalg::sub(x, &th));
        assert!(step(&big) <= step(&mid) && step(&mid) <= step(&small));
    }

    #[test]
    fn adamw_first_step_closed_form() {
        let m = identity_setup();
        let s = build_surrogate(&m, &[0.0, 0.0], &[1.0, -2.0], 0.5, None).unwrap();
        let theta = [0.4, -0.3];
        let h = AdamHyper {
            lr: 0.01,
            weight_decay: 0.1,
            ..AdamHyper::default()
        };
        let g = s.gradient(&theta).unwrap();
        let (next, st) = adamw_step(&s, &theta, &AdamState::zeros(2), &h).unwrap();
        for i in 0..2 {
            let expect =
                theta[i] - h.lr * g[i] / (g[i].abs() + h.eps) - h.lr * h.weight_decay * theta[i];
            assert!((next[i] - expect).abs() <= 1e-12);
        }
        assert_eq!(st.step_count, 1);
        let (again, st2) = adamw_step(&s, &theta, &AdamState::zeros(2), &h).unwrap();
        assert_eq!(again, next);
        assert_eq!(st2, st);
    }

    #[test]
    fn adamw_zero_gradient_only_decays_moments() {
        let theta = [1.0, 2.0];
        let state = AdamState {
            m: vec![0.5, -0.5],
            v: vec![0.2, 0.3],
            step_count: 3,
        };
        let h = AdamHyper::default();
        let (_, st) = adamw_apply(&theta, &[0.0, 0.0], &AdamState::zeros(2), &h);
        assert_eq!(st.m, vec![0.0, 0.0]);
        let (_, st) = adamw_apply(&theta, &[0.0, 0.0], &state, &h);
        assert_eq!(st.m, vec![0.45, -0.45]);
        let (next, _) = adamw_apply(&theta, &[0.0, 0.0], &AdamState::zeros(2), &h);
        assert_eq!(next, theta.to_vec());
    }

    #[test]
    fn run_inner_examples() {
        let phi = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]]);
        let lin = LinearModel::new(phi);
        let s = build_surrogate(&lin, &[0.0, 0.0], &[1.0, 1.0, 1.0], 0.5, None).unwrap();
        let ls = crate::surrogate::lstar(&s, LstarMode::Exact).unwrap();
        let rule = AlphaRule::new(0.99, LstarMode::Exact, 50).unwrap();
        let gn = InnerStrategy::new(SolverKind::Gn, StopRule::Alpha(rule));
        let out = run_inner(&s, &[0.0, 0.0], &gn, ls, s.anchor_value()).unwrap();
        assert_eq!(out.steps, 1);
        assert!(!out.cap_hit);

        let fixed = InnerStrategy::fixed(SolverKind::Gd { lr: 0.01 }, 10);
        let out = run_inner(&s, &[0.0, 0.0], &fixed, ls, s.anchor_value()).unwrap();
        assert_eq!(out.steps, 10);

        // 1-D quadratic ½(θ − 1)²; lr = 0.1 contracts the error by 0.9 per step
        let one = LinearModel::new(Matrix::identity(1));
        let s = build_surrogate(&one, &[0.0], &[-1.0], 1.0, None).unwrap();
        let rule = AlphaRule::new(0.5, LstarMode::Zero, 100).unwrap();
        let gd = InnerStrategy::new(SolverKind::Gd { lr: 0.1 }, StopRule::Alpha(rule));
        let out = run_inner(&s, &[0.0], &gd, 0.0, s.anchor_value()).unwrap();
        assert_eq!(out.steps, 7);
    }

    #[test]
    fn run_inner_reports_cap() {
        let one = LinearModel::new(Matrix::identity(1));
        let s = build_surrogate(&one, &[0.0], &[-1.0], 1.0, None).unwrap();
        let rule = AlphaRule::new(0.1, LstarMode::Zero, 3).unwrap();
        let gd = InnerStrategy::new(SolverKind::Gd { lr: 0.01 }, StopRule::Alpha(rule));
        let out = run_inner(&s, &[0.0], &gd, 0.0, s.anchor_value()).unwrap();
        assert_eq!(out.steps, 3);
        assert!(out.cap_hit);
        assert!(!alpha_satisfied(
            &rule,
            out.final_loss,
            s.anchor_value(),
            0.0
        ));
    }

    #[test]
    fn every_strategy_descends_on_pennies() {
        let model = pennies_model();
        let op = AffineOperator::pennies();
        let theta = [1.25, 2.25];
        let f = op.eval(&model.forward(&theta).unwrap()).unwrap();
        let s = build_surrogate(&model, &theta, &f, 0.01, None).unwrap();
        let anchor = s.anchor_value();
        let kinds = [
            SolverKind::Gd { lr: 1.0 },
            SolverKind::Gn,
            SolverKind::Dgn { eta_gn: 0.5 },
            SolverKind::Lm { lambda: 1e-3 },
            SolverKind::AdamW(AdamHyper {
                lr: 1e-3,
                ..AdamHyper::default()
            }),
        ];
        for kind in kinds {
            let out = run_inner(&s, &theta, &InnerStrategy::fixed(kind, 1), 0.0, anchor).unwrap();
            assert!(out.final_loss < anchor, "{kind:?}");
        }
    }

    #[test]
    fn strategy_validation() {
        assert!(InnerStrategy::fixed(SolverKind::Gd { lr: 0.0 }, 1)
            .validate()
            .is_err());
        assert!(InnerStrategy::fixed(SolverKind::Dgn { eta_gn: 1.5 }, 1)
            .validate()
            .is_err());
        assert!(InnerStrategy::fixed(SolverKind::Lm { lambda: -1.0 }, 1)
            .validate()
            .is_err());
        assert!(InnerStrategy::fixed(SolverKind::Gn, 0).validate().is_err());
        assert!(InnerStrategy::fixed(SolverKind::Gn, 1).validate().is_ok());
    }

    #[test]
    fn strategy_round_trips_through_json() {
        let s = InnerStrategy::new(
            SolverKind::Dgn { eta_gn: 0.5 },
            StopRule::Alpha(AlphaRule::new(0.3, LstarMode::Exact, 20).unwrap()),
        );
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<InnerStrategy>(&text).unwrap(), s);
    }
}
