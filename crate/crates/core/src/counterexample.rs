//! A biased inner rule that meets the α-descent condition with `α = 1/√2`
//! on a smooth strongly monotone problem and still diverges.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::driver::{InnerRule, RunStatus, TrajectoryRecord, TrajectoryRow};
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::solvers::InnerOutcome;
use crate::surrogate::SurrogateLoss;
use crate::vi_problems::AffineOperator;

/// Operator `F = [[1, 1], [−1, 1]]`, bias rotation `Q` by 45° and `α = 1/√2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleSpec {
    pub eta: f64,
    pub f_matrix: Matrix,
    pub q_matrix: Matrix,
    pub alpha: f64,
}

impl CounterexampleSpec {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidConfig(
                "counterexample eta must be > 0".into(),
            ));
        }
        let c = FRAC_1_SQRT_2;
        Ok(Self {
            eta,
            f_matrix: Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 1.0]]),
            q_matrix: Matrix::from_rows(&[vec![c, -c], vec![c, c]]),
            alpha: FRAC_1_SQRT_2,
        })
    }

    /// The operator `F(z) = F z` with solution at the origin.
    pub fn operator(&self) -> AffineOperator {
        AffineOperator::new(self.f_matrix.clone(), vec![0.0, 0.0]).expect("static shape")
    }

    /// `(I − αQ)·ηF`.
    pub fn p_product(&self) -> Matrix {
        let i_minus = Matrix::identity(2)
            .sub(&self.q_matrix.scale(self.alpha))
            .expect("2×2");
        i_minus.matmul(&self.f_matrix.scale(self.eta)).expect("2×2")
    }

    pub fn p_matrix(&self) -> Matrix {
        p_closed_form(self.eta)
    }
}

fn p_closed_form(eta: f64) -> Matrix {
    Matrix::from_rows(&[vec![0.0, eta], vec![-eta, 0.0]])
}

/// `P = (I − αQ)ηF`, checked against `[[0, η], [−η, 0]]`.
pub fn build_p(eta: f64) -> Result<Matrix> {
    let spec = CounterexampleSpec::new(eta)?;
    let p = spec.p_product();
    let closed = p_closed_form(eta);
    let err = p.sub(&closed)?.max_abs();
    if err > 1e-12 * eta.max(1.0) {
        return Err(Error::NumericalBlowup(format!(
            "P deviates from closed form by {err:e}"
        )));
    }
    Ok(p)
}

/// `‖(ηF − P)z‖ / (η‖Fz‖)`.
pub fn measure_alpha(spec: &CounterexampleSpec, z: &[f64]) -> Result<f64> {
    check_len(2, z.len(), "counterexample point")?;
    let fz = spec.f_matrix.mat_vec(z)?;
    let denom = spec.eta * linalg::norm(&fz);
    if denom == 0.0 {
        return Err(Error::ZeroDenominator("measure_alpha"));
    }
    let gap = spec.f_matrix.scale(spec.eta).sub(&spec.p_product())?;
    Ok(linalg::norm(&gap.mat_vec(z)?) / denom)
}

/// Divergence trace: norms and per-step growth factors.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRun {
    pub record: TrajectoryRecord,
    pub norms: Vec<f64>,
    pub growth: Vec<f64>,
}

/// Iterates `z_{t+1} = (I − P) z_t`.
pub fn run_divergence(
    spec: &CounterexampleSpec,
    z0: &[f64],
    steps: usize,
) -> Result<DivergenceRun> {
    check_len(2, z0.len(), "counterexample start")?;
    if linalg::norm(z0) == 0.0 {
        return Err(Error::ZeroDenominator("run_divergence start"));
    }
    let step = Matrix::identity(2).sub(&spec.p_matrix())?;
    let mut z = z0.to_vec();
    let mut norms = vec![linalg::norm(&z)];
    let mut growth = Vec::with_capacity(steps);
    let mut rows = Vec::with_capacity(steps);
    let mut iterates = vec![z.clone()];
    for t in 1..=steps {
        z = step.mat_vec(&z)?;
        let n = linalg::norm(&z);
        growth.push(n / norms[t - 1]);
        norms.push(n);
        rows.push(TrajectoryRow::distance_only(t, n * n));
        iterates.push(z.clone());
    }
    let record = TrajectoryRecord {
        rows,
        initial_dist_sq: norms[0] * norms[0],
        thetas: Vec::new(),
        iterates,
        lstars: Vec::new(),
        f_evals: steps,
        status: RunStatus::Completed,
    };
    Ok(DivergenceRun {
        record,
        norms,
        growth,
    })
}

/// Scripted inner rule returning `θ_t − Pθ_t` for the identity model.
#[derive(Debug, Clone)]
pub struct BiasedRule {
    p: Matrix,
}

impl BiasedRule {
    pub fn new(spec: &CounterexampleSpec) -> Self {
        Self { p: spec.p_matrix() }
    }
}

impl InnerRule for BiasedRule {
    fn run(
        &mut self,
        s: &SurrogateLoss<'_>,
        theta_t: &[f64],
        _lstar: f64,
        _loss_anchor: f64,
    ) -> Result<InnerOutcome> {
        use crate::surrogate::Objective;
        let theta: Vector = linalg::sub(theta_t, &self.p.mat_vec(theta_t)?);
        Ok(InnerOutcome {
            final_loss: s.value(&theta)?,
            theta,
            steps: 1,
            grad_evals: 0,
            cap_hit: false,
        })
    }
}
