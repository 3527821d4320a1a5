//! Fixed-seed self-checks behind `hidden-vi verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::counterexample::{measure_alpha, run_divergence, CounterexampleSpec};
use crate::error::Result;
use crate::experiments::{pennies_model, rps_model, PENNIES_COEFFICIENTS};
use crate::linalg::{self, Matrix, Vector, DEFAULT_RANK_TOL};
use crate::models::{jacobian_fd_error, LinearModel, PredictionModel};
use crate::rl_pbe::{
    exact_linear_fixed_point, make_slow_mixing_chain, pbe_operator, stationary_distribution,
    FeatureMap,
};
use crate::solvers::gn_step;
use crate::surrogate::{build_surrogate, Objective};
use crate::vi_problems::{AffineOperator, VIOperator};

pub const VERIFY_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyOptions {
    /// Perturbs one analytic Jacobian entry so the derivative suites fail.
    pub corrupt_jacobian: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub max_error: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.suites
            .iter()
            .filter(|s| !s.passed)
            .map(|s| s.name)
            .collect()
    }
}

struct Corrupted<'a>(&'a dyn PredictionModel);

impl PredictionModel for Corrupted<'_> {
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }

    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }

    fn forward(&self, theta: &[f64]) -> Result<Vector> {
        self.0.forward(theta)
    }

    fn jacobian(&self, theta: &[f64]) -> Result<Matrix> {
        let mut j = self.0.jacobian(theta)?;
        j[(0, 0)] += 1e-2;
        Ok(j)
    }
}

fn suite(name: &'static str, err: Result<f64>, tol: f64) -> SuiteResult {
    let max_error = err.unwrap_or(f64::INFINITY);
    SuiteResult {
        name,
        max_error,
        tol,
        passed: max_error <= tol,
    }
}

fn test_models(rng: &mut ChaCha8Rng) -> Vec<(Box<dyn PredictionModel>, Vector)> {
    let lin = LinearModel::new(Matrix::from_rows(&[
        vec![1.0, 2.0, 0.5],
        vec![-1.0, 0.3, 2.0],
    ]));
    let mut out: Vec<(Box<dyn PredictionModel>, Vector)> = Vec::new();
    for _ in 0..5 {
        out.push((
            Box::new(pennies_model(&PENNIES_COEFFICIENTS)),
            (0..2).map(|_| rng.random_range(-3.0..3.0)).collect(),
        ));
        out.push((
            Box::new(rps_model(rng)),
            (0..10).map(|_| rng.random_range(-2.0..2.0)).collect(),
        ));
        out.push((
            Box::new(lin.clone()),
            (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
        ));
    }
    out
}

fn jacobian_suite(models: &[(Box<dyn PredictionModel>, Vector)], corrupt: bool) -> Result<f64> {
    let mut worst = 0.0f64;
    for (m, theta) in models {
        let e = if corrupt {
            jacobian_fd_error(&Corrupted(m.as_ref()), theta, 1e-6)?
        } else {
            jacobian_fd_error(m.as_ref(), theta, 1e-6)?
        };
        worst = worst.max(e);
    }
    Ok(worst)
}

fn surrogate_gradient_suite(
    models: &[(Box<dyn PredictionModel>, Vector)],
    corrupt: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (m, theta) in models {
        let wrapped = Corrupted(m.as_ref());
        let model: &dyn PredictionModel = if corrupt { &wrapped } else { m.as_ref() };
        let f: Vector = (0..model.output_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let s = build_surrogate(model, theta, &f, 0.3, None)?;
        let probe: Vector = theta
            .iter()
            .map(|t| t + rng.random_range(-0.2..0.2))
            .collect();
        let g = s.gradient(&probe)?;
        let h = 1e-6;
        let mut tp = probe.clone();
        let mut gap = 0.0f64;
        for k in 0..probe.len() {
            tp[k] = probe[k] + h;
            let up = s.value(&tp)?;
            tp[k] = probe[k] - h;
            let dn = s.value(&tp)?;
            tp[k] = probe[k];
            gap = gap.max((g[k] - (up - dn) / (2.0 * h)).abs());
        }
        worst = worst.max(gap / linalg::norm(&g).max(1e-3));
    }
    Ok(worst)
}

fn gn_exact_suite() -> Result<f64> {
    let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![-1.0, 3.0]]);
    let model = LinearModel::new(a);
    let op = AffineOperator::new(
        Matrix::from_rows(&[vec![1.0, 2.0], vec![-2.0, 1.0]]),
        vec![0.3, -0.4],
    )?;
    let mut theta = vec![1.0, -2.0];
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let z = model.forward(&theta)?;
        let f = op.eval(&z)?;
        let want = linalg::axpy(&z, -0.2, &f);
        let s = build_surrogate(&model, &theta, &f, 0.2, None)?;
        theta = gn_step(&s, &theta, DEFAULT_RANK_TOL)?;
        worst = worst.max(linalg::norm(&linalg::sub(&model.forward(&theta)?, &want)));
    }
    Ok(worst)
}

fn operator_constants_suite() -> Result<f64> {
    let op = AffineOperator::pennies();
    let mu = op.mu().unwrap_or(f64::NAN);
    let lip = op.lip().unwrap_or(f64::NAN);
    Ok((mu - 0.75)
        .abs()
        .max((lip - (0.75f64 * 0.75 + 16.0).sqrt()).abs()))
}

fn counterexample_suite() -> Result<f64> {
    let mut worst = 0.0f64;
    for eta in [0.01, 0.1, 0.5] {
        let spec = CounterexampleSpec::new(eta)?;
        let run = run_divergence(&spec, &[0.3, -0.7], 100)?;
        let g = (1.0 + eta * eta).sqrt();
        for x in &run.growth {
            worst = worst.max((x - g).abs());
        }
        let a = measure_alpha(&spec, &[0.3, -0.7])?;
        worst = worst.max((a - std::f64::consts::FRAC_1_SQRT_2).abs());
    }
    Ok(worst)
}

fn stationary_suite() -> Result<f64> {
    let mc = make_slow_mixing_chain(30, 0.5, 0.9, VERIFY_SEED)?;
    let xi = stationary_distribution(mc.p())?;
    let back = mc.p().tr_mat_vec(&xi)?;
    let sum: f64 = xi.iter().sum();
    Ok(linalg::norm(&linalg::sub(&back, &xi)).max((sum - 1.0).abs()))
}

fn pbe_fixed_point_suite() -> Result<f64> {
    let mc = make_slow_mixing_chain(30, 0.5, 0.9, VERIFY_SEED + 1)?;
    let fm = FeatureMap::gaussian(30, 5, VERIFY_SEED + 2)?;
    let theta = exact_linear_fixed_point(&mc, &fm)?;
    let v = fm.phi().mat_vec(&theta)?;
    let residual = fm.phi().tr_mat_vec(&pbe_operator(&mc, &v)?)?;
    Ok(linalg::norm(&residual))
}

/// Runs every suite with the fixed seed.
pub fn run_verify(opts: VerifyOptions) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(VERIFY_SEED);
    let models = test_models(&mut rng);
    let suites = vec![
        suite(
            "jacobian_finite_difference",
            jacobian_suite(&models, opts.corrupt_jacobian),
            1e-6,
        ),
        suite(
            "surrogate_gradient_finite_difference",
            surrogate_gradient_suite(&models, opts.corrupt_jacobian, &mut rng),
            1e-5,
        ),
        suite("gauss_newton_linear_exact", gn_exact_suite(), 1e-10),
        suite(
            "affine_operator_constants",
            operator_constants_suite(),
            1e-12,
        ),
        suite("counterexample_growth", counterexample_suite(), 1e-9),
        suite("stationary_distribution", stationary_suite(), 1e-10),
        suite(
            "projected_bellman_fixed_point",
            pbe_fixed_point_suite(),
            1e-9,
        ),
    ];
    VerifyReport {
        seed: VERIFY_SEED,
        suites,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes() {
        let r = run_verify(VerifyOptions::default());
        assert!(r.passed(), "{:?}", r.suites);
    }

    #[test]
    fn corrupted_jacobian_is_caught() {
        let r = run_verify(VerifyOptions {
            corrupt_jacobian: true,
        });
        let f = r.failures();
        assert!(f.contains(&"jacobian_finite_difference"));
        assert!(f.contains(&"surrogate_gradient_finite_difference"));
        assert!(!f.contains(&"stationary_distribution"));
    }
}
