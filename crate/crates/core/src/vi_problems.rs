//! Monotone operators `F(z)`, their domains, and Euclidean projections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Feasible set of a variational inequality.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    AllSpace,
    Box {
        lower: Vector,
        upper: Vector,
    },
    /// Product of probability simplices with the given block sizes.
    SimplexProduct {
        sizes: Vec<usize>,
    },
}

impl DomainSpec {
    pub fn unit_box(n: usize) -> Self {
        DomainSpec::Box {
            lower: vec![0.0; n],
            upper: vec![1.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::AllSpace => Ok(()),
            DomainSpec::Box { lower, upper } => {
                check_len(lower.len(), upper.len(), "box bounds")?;
                if lower.iter().zip(upper).all(|(l, u)| l < u) {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig("box bounds need lower < upper".into()))
                }
            }
            DomainSpec::SimplexProduct { sizes } => {
                if sizes.iter().all(|&s| s > 0) {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(
                        "simplex sizes must be positive".into(),
                    ))
                }
            }
        }
    }

    /// Euclidean projection onto the domain.
    pub fn project(&self, z: &[f64]) -> Vector {
        match self {
            DomainSpec::AllSpace => z.to_vec(),
            DomainSpec::Box { lower, upper } => z
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&v, (&l, &u))| v.clamp(l, u))
                .collect(),
            DomainSpec::SimplexProduct { sizes } => {
                let mut out = Vec::with_capacity(z.len());
                let mut off = 0;
                for &s in sizes {
                    out.extend(project_simplex(&z[off..off + s]));
                    off += s;
                }
                out
            }
        }
    }

    /// Draws a point from the domain (standard normal for `AllSpace`).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vector {
        match self {
            DomainSpec::AllSpace => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            DomainSpec::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| l + (u - l) * rng.random::<f64>())
                .collect(),
            DomainSpec::SimplexProduct { sizes } => {
                let mut out = Vec::with_capacity(n);
                for &s in sizes {
                    let e: Vector = (0..s).map(|_| Exp1.sample(rng)).collect();
                    let tot: f64 = e.iter().sum();
                    out.extend(e.into_iter().map(|v: f64| v / tot));
                }
                out
            }
        }
    }
}

/// Projection onto the probability simplex by sorting.
pub fn project_simplex(v: &[f64]) -> Vector {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k as f64 + 1.0);
        if uk - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// A VI operator `F: ℝⁿ → ℝⁿ` with whatever constants are known about it.
pub trait VIOperator: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, z: &[f64]) -> Result<Vector>;

    fn domain(&self) -> &DomainSpec;

    fn solution(&self) -> Option<Vector> {
        None
    }

    /// Strong monotonicity constant.
    fn mu(&self) -> Option<f64> {
        None
    }

    /// Lipschitz constant.
    fn lip(&self) -> Option<f64> {
        None
    }
}

fn symmetric_min_eig(b: &Matrix) -> f64 {
    linalg::sym_extreme_eigs(&b.symmetric_part())
        .map(|(lo, _)| lo)
        .unwrap_or(f64::NAN)
}

fn exact_operator_norm(b: &Matrix) -> f64 {
    linalg::sym_extreme_eigs(&b.gram())
        .map(|(_, hi)| hi.max(0.0).sqrt())
        .unwrap_or(f64::NAN)
}

/// `F(z) = B (z − center)`.
#[derive(Debug, Clone)]
pub struct AffineOperator {
    b: Matrix,
    center: Vector,
    domain: DomainSpec,
    mu: f64,
    lip: f64,
}

impl AffineOperator {
    pub fn new(b: Matrix, center: Vector) -> Result<Self> {
        check_len(b.rows(), b.cols(), "affine operator matrix")?;
        check_len(b.rows(), center.len(), "affine operator center")?;
        let mu = symmetric_min_eig(&b);
        let lip = exact_operator_norm(&b);
        Ok(Self {
            b,
            center,
            domain: DomainSpec::AllSpace,
            mu,
            lip,
        })
    }

    pub fn with_domain(mut self, domain: DomainSpec) -> Self {
        self.domain = domain;
        self
    }

    /// Hidden matching pennies in operator form: `B = [[0.75, −4], [4, 0.75]]`
    /// centered at `(½, ½)` on the unit box.
    pub fn pennies() -> Self {
        let b = Matrix::from_rows(&[vec![0.75, -4.0], vec![4.0, 0.75]]);
        Self::new(b, vec![0.5, 0.5])
            .expect("static shape")
            .with_domain(DomainSpec::unit_box(2))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.b
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }
}

impl VIOperator for AffineOperator {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, z: &[f64]) -> Result<Vector> {
        check_len(self.dim(), z.len(), "operator input")?;
        self.b.mat_vec(&linalg::sub(z, &self.center))
    }

    fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    fn solution(&self) -> Option<Vector> {
        Some(self.center.clone())
    }

    fn mu(&self) -> Option<f64> {
        Some(self.mu)
    }

    fn lip(&self) -> Option<f64> {
        Some(self.lip)
    }
}

/// Standard rock-paper-scissors payoff.
pub fn rps_payoff() -> Matrix {
    Matrix::from_rows(&[
        vec![0.0, -1.0, 1.0],
        vec![1.0, 0.0, -1.0],
        vec![-1.0, 1.0, 0.0],
    ])
}

/// Regularized bilinear game `F(z) = [A z²; −Aᵀ z¹] + λ(z − center)` on a
/// product of two simplices.
#[derive(Debug, Clone)]
pub struct RpsOperator {
    payoff: Matrix,
    lambda: f64,
    center: Vector,
    domain: DomainSpec,
    full: Matrix,
}

impl RpsOperator {
    pub fn new(payoff: Matrix, lambda: f64) -> Result<Self> {
        check_len(payoff.rows(), payoff.cols(), "payoff matrix")?;
        let k = payoff.rows();
        let mut full = Matrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            for j in 0..k {
                full[(i, k + j)] = payoff[(i, j)];
                full[(k + j, i)] = -payoff[(i, j)];
            }
            full[(i, i)] = lambda;
            full[(k + i, k + i)] = lambda;
        }
        Ok(Self {
            payoff,
            lambda,
            center: vec![1.0 / k as f64; 2 * k],
            domain: DomainSpec::SimplexProduct { sizes: vec![k, k] },
            full,
        })
    }

    /// Standard payoff with `λ = 0.2`.
    pub fn standard() -> Self {
        Self::new(rps_payoff(), 0.2).expect("static shape")
    }

    pub fn payoff(&self) -> &Matrix {
        &self.payoff
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The full `2k × 2k` linear part.
    pub fn linear_part(&self) -> &Matrix {
        &self.full
    }
}

impl VIOperator for RpsOperator {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, z: &[f64]) -> Result<Vector> {
        check_len(self.dim(), z.len(), "operator input")?;
        // λ(z − c) + [A z²; −Aᵀ z¹] = full·z − λc
        let mut out = self.full.mat_vec(z)?;
        for (o, c) in out.iter_mut().zip(&self.center) {
            *o -= self.lambda * c;
        }
        Ok(out)
    }

    fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    fn solution(&self) -> Option<Vector> {
        let f = self.eval(&self.center).ok()?;
        (linalg::norm(&f) <= 1e-12).then(|| self.center.clone())
    }

    fn mu(&self) -> Option<f64> {
        Some(self.lambda)
    }

    fn lip(&self) -> Option<f64> {
        Some(exact_operator_norm(&self.full))
    }
}

/// Projected-Bellman VI operator `F(z) = Ξ(z − r − γPz)`.
#[derive(Debug, Clone)]
pub struct LinearBellmanOperator {
    xi: Vector,
    p: Matrix,
    r: Vector,
    gamma: f64,
    domain: DomainSpec,
}

impl LinearBellmanOperator {
    pub fn new(xi: Vector, p: Matrix, r: Vector, gamma: f64) -> Result<Self> {
        let n = xi.len();
        check_len(n, p.rows(), "transition rows")?;
        check_len(n, p.cols(), "transition cols")?;
        check_len(n, r.len(), "reward vector")?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} not in [0,1)")));
        }
        Ok(Self {
            xi,
            p,
            r,
            gamma,
            domain: DomainSpec::AllSpace,
        })
    }

    /// `Ξ(I − γP)`.
    pub fn matrix(&self) -> Matrix {
        let n = self.xi.len();
        let mut m = self.p.scale(-self.gamma).add_diag(1.0);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] *= self.xi[i];
            }
        }
        m
    }
}

impl VIOperator for LinearBellmanOperator {
    fn dim(&self) -> usize {
        self.xi.len()
    }

    fn eval(&self, z: &[f64]) -> Result<Vector> {
        check_len(self.dim(), z.len(), "operator input")?;
        let pz = self.p.mat_vec(z)?;
        Ok((0..z.len())
            .map(|i| self.xi[i] * (z[i] - self.r[i] - self.gamma * pz[i]))
            .collect())
    }

    fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    fn solution(&self) -> Option<Vector> {
        let a = self.p.scale(-self.gamma).add_diag(1.0);
        linalg::solve_lu(&a, &self.r).ok()
    }

    fn mu(&self) -> Option<f64> {
        Some(symmetric_min_eig(&self.matrix()))
    }

    fn lip(&self) -> Option<f64> {
        Some(exact_operator_norm(&self.matrix()))
    }
}

/// Empirical monotonicity and Lipschitz constants over `samples` random
/// pairs drawn from the operator's domain.
pub fn monotonicity_probe(op: &dyn VIOperator, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::InvalidConfig(
            "monotonicity probe needs ≥ 2 samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = op.dim();
    let mut mu_hat = f64::INFINITY;
    let mut lip_hat: f64 = 0.0;
    for _ in 0..samples {
        let x = op.domain().sample(n, &mut rng);
        let y = op.domain().sample(n, &mut rng);
        let dz = linalg::sub(&x, &y);
        let dd = linalg::norm_sq(&dz);
        if dd <= 1e-24 {
            continue;
        }
        let df = linalg::sub(&op.eval(&x)?, &op.eval(&y)?);
        mu_hat = mu_hat.min(linalg::dot(&df, &dz) / dd);
        lip_hat = lip_hat.max(linalg::norm(&df) / dd.sqrt());
    }
    Ok((mu_hat, lip_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_oneof, proptest, Just, Strategy};

    #[test]
    fn pennies_examples() {
        let op = AffineOperator::pennies();
        assert_eq!(op.eval(&[0.5, 0.5]).unwrap(), vec![0.0, 0.0]);
        let f = op.eval(&[1.0, 1.0]).unwrap();
        assert!((f[0] + 1.625).abs() < 1e-15 && (f[1] - 2.375).abs() < 1e-15);
        assert!((op.mu().unwrap() - 0.75).abs() < 1e-12);
        assert!((op.lip().unwrap() - 16.5625f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rps_equilibrium_is_uniform() {
        let op = RpsOperator::standard();
        let f = op.eval(&[1.0 / 3.0; 6]).unwrap();
        assert!(linalg::norm(&f) < 1e-15);
        assert!(op.solution().is_some());
        assert_eq!(op.mu(), Some(0.2));
    }

    #[test]
    fn rps_operator_matches_block_formula() {
        let op = RpsOperator::standard();
        let z = [0.2, 0.3, 0.5, 0.6, 0.1, 0.3];
        let a = rps_payoff();
        let az2 = a.mat_vec(&z[3..]).unwrap();
        let atz1 = a.tr_mat_vec(&z[..3]).unwrap();
        let f = op.eval(&z).unwrap();
        for i in 0..3 {
            assert!((f[i] - (az2[i] + 0.2 * (z[i] - 1.0 / 3.0))).abs() < 1e-15);
            assert!((f[3 + i] - (-atz1[i] + 0.2 * (z[3 + i] - 1.0 / 3.0))).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_dimension_mismatch() {
        assert!(matches!(
            AffineOperator::pennies().eval(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(DomainSpec::AllSpace.project(&[5.0, -3.0]), vec![5.0, -3.0]);
        assert_eq!(
            DomainSpec::unit_box(2).project(&[1.2, -0.4]),
            vec![1.0, 0.0]
        );
        let p = DomainSpec::SimplexProduct { sizes: vec![3] }.project(&[1.0, 1.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn simplex_projection_matches_grid_oracle() {
        let z = [1.0, 1.0, 0.0];
        let steps = 1000;
        let mut best = (f64::INFINITY, [0.0; 3]);
        for i in 0..=steps {
            for j in 0..=steps - i {
                let p = [
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    (steps - i - j) as f64 / steps as f64,
                ];
                let d = linalg::dist_sq(&p, &z);
                if d < best.0 {
                    best = (d, p);
                }
            }
        }
        let proj = project_simplex(&z);
        assert!(linalg::dist_sq(&proj, &best.1).sqrt() <= 1e-6);
    }

    #[test]
    fn probe_examples() {
        let (mu, lip) = monotonicity_probe(&AffineOperator::pennies(), 500, 1).unwrap();
        assert!(mu >= 0.75 - 1e-9);
        assert!(lip <= 16.5625f64.sqrt() + 1e-9);
        let (mu, _) = monotonicity_probe(&RpsOperator::standard(), 500, 2).unwrap();
        assert!(mu >= 0.2 - 1e-9);
        let id = AffineOperator::new(Matrix::identity(3), vec![0.0; 3]).unwrap();
        let (mu, lip) = monotonicity_probe(&id, 100, 3).unwrap();
        assert!((mu - 1.0).abs() < 1e-9 && (lip - 1.0).abs() < 1e-9);
        assert!(monotonicity_probe(&id, 1, 3).is_err());
    }

    #[test]
    fn affine_probe_never_below_symmetric_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..100 {
            let vals: Vector = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = Matrix::new(3, 3, vals).unwrap().add_diag(2.0);
            let op = AffineOperator::new(b, vec![0.0; 3]).unwrap();
            let (mu_hat, _) = monotonicity_probe(&op, 200, seed).unwrap();
            assert!(mu_hat >= op.mu().unwrap() - 1e-9);
        }
    }

    #[test]
    fn box_validation() {
        let bad = DomainSpec::Box {
            lower: vec![1.0],
            upper: vec![0.0],
        };
        assert!(bad.validate().is_err());
        assert!(DomainSpec::SimplexProduct { sizes: vec![0] }
            .validate()
            .is_err());
    }

    fn domains() -> impl Strategy<Value = DomainSpec> {
        prop_oneof![
            Just(DomainSpec::AllSpace),
            Just(DomainSpec::unit_box(4)),
            Just(DomainSpec::SimplexProduct { sizes: vec![4] }),
            Just(DomainSpec::SimplexProduct { sizes: vec![2, 2] }),
        ]
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(d in domains(), z in prop::collection::vec(-5.0f64..5.0, 4)) {
            let p = d.project(&z);
            let pp = d.project(&p);
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn projection_is_non_expansive(
            d in domains(),
            x in prop::collection::vec(-5.0f64..5.0, 4),
            y in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let gap = linalg::dist_sq(&d.project(&x), &d.project(&y)).sqrt();
            prop_assert!(gap <= linalg::dist_sq(&x, &y).sqrt() + 1e-12);
        }
    }
}
