//! Parametric prediction maps `z = g(θ)` with analytic Jacobians.

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::vi_problems::DomainSpec;

/// A differentiable map from parameters (length `param_dim`) to predictions
/// (length `output_dim`).
pub trait PredictionModel: Send + Sync {
    fn param_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn forward(&self, theta: &[f64]) -> Result<Vector>;

    /// `output_dim × param_dim` Jacobian.
    fn jacobian(&self, theta: &[f64]) -> Result<Matrix>;

    /// Vector-Jacobian product `Dg(θ)ᵀ u`.
    fn vjp(&self, theta: &[f64], u: &[f64]) -> Result<Vector> {
        check_len(self.output_dim(), u.len(), "vjp cotangent")?;
        self.jacobian(theta)?.tr_mat_vec(u)
    }

    fn as_linear(&self) -> Option<&LinearModel> {
        None
    }

    /// Closure of `{g(θ)}` when it is a set we can project onto.
    fn image_closure(&self) -> Option<DomainSpec> {
        None
    }
}

pub fn celu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn celu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(u: &[f64]) -> Vector {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vector = u.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `g(θ) = Φθ`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    phi: Matrix,
    surjective: bool,
}

impl LinearModel {
    pub fn new(phi: Matrix) -> Self {
        let surjective = phi.cols() >= phi.rows()
            && phi.rows() > 0
            && linalg::sym_extreme_eigs(&phi.transpose().gram())
                .map(|(lo, hi)| hi > 0.0 && lo > 1e-12 * hi)
                .unwrap_or(false);
        Self { phi, surjective }
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }
}

impl PredictionModel for LinearModel {
    fn param_dim(&self) -> usize {
        self.phi.cols()
    }

    fn output_dim(&self) -> usize {
        self.phi.rows()
    }

    fn forward(&self, theta: &[f64]) -> Result<Vector> {
        self.phi.mat_vec(theta)
    }

    fn jacobian(&self, theta: &[f64]) -> Result<Matrix> {
        check_len(self.param_dim(), theta.len(), "linear model parameters")?;
        Ok(self.phi.clone())
    }

    fn vjp(&self, theta: &[f64], u: &[f64]) -> Result<Vector> {
        check_len(self.param_dim(), theta.len(), "linear model parameters")?;
        self.phi.tr_mat_vec(u)
    }

    fn as_linear(&self) -> Option<&LinearModel> {
        Some(self)
    }

    fn image_closure(&self) -> Option<DomainSpec> {
        self.surjective.then_some(DomainSpec::AllSpace)
    }
}

/// One-parameter player map `θ ↦ sigmoid(a2 · CELU(a1 θ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSigmoidCelu {
    pub a1: f64,
    pub a2: f64,
}

impl ScalarSigmoidCelu {
    pub fn new(a1: f64, a2: f64) -> Self {
        Self { a1, a2 }
    }

    /// Coefficients drawn uniformly from `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
    }

    fn eval(&self, t: f64) -> f64 {
        sigmoid(self.a2 * celu(self.a1 * t))
    }

    fn derivative(&self, t: f64) -> f64 {
        let inner = self.a1 * t;
        let s = sigmoid(self.a2 * celu(inner));
        s * (1.0 - s) * self.a2 * celu_prime(inner) * self.a1
    }
}

impl PredictionModel for ScalarSigmoidCelu {
    fn param_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn forward(&self, theta: &[f64]) -> Result<Vector> {
        check_len(1, theta.len(), "scalar model parameters")?;
        Ok(vec![self.eval(theta[0])])
    }

    fn jacobian(&self, theta: &[f64]) -> Result<Matrix> {
        check_len(1, theta.len(), "scalar model parameters")?;
        Matrix::new(1, 1, vec![self.derivative(theta[0])])
    }

    fn image_closure(&self) -> Option<DomainSpec> {
        // CELU(a1 θ) sweeps (-1, ∞) whenever a1 ≠ 0
        if self.a1 == 0.0 || self.a2 == 0.0 {
            return None;
        }
        let edge = sigmoid(-self.a2);
        let (lo, hi) = if self.a2 > 0.0 {
            (edge, 1.0)
        } else {
            (0.0, edge)
        };
        Some(DomainSpec::Box {
            lower: vec![lo],
            upper: vec![hi],
        })
    }
}

/// Mixed-strategy map `θ ↦ softmax(A2 · CELU(A1 θ))`.
#[derive(Debug, Clone)]
pub struct SoftmaxMlp {
    a1: Matrix,
    a2: Matrix,
}

impl SoftmaxMlp {
    pub fn new(a1: Matrix, a2: Matrix) -> Result<Self> {
        check_len(a1.rows(), a2.cols(), "softmax mlp hidden width")?;
        Ok(Self { a1, a2 })
    }

    /// `A1 ∈ ℝ^{4×5}`, `A2 ∈ ℝ^{3×4}` with entries uniform on `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut draw = |r: usize, c: usize| {
            let v = (0..r * c).map(|_| rng.random_range(-1.0..=1.0)).collect();
            Matrix::new(r, c, v).expect("finite draws")
        };
        let a1 = draw(4, 5);
        let a2 = draw(3, 4);
        Self { a1, a2 }
    }

    pub fn a1(&self) -> &Matrix {
        &self.a1
    }

    pub fn a2(&self) -> &Matrix {
        &self.a2
    }
}

impl PredictionModel for SoftmaxMlp {
    fn param_dim(&self) -> usize {
        self.a1.cols()
    }

    fn output_dim(&self) -> usize {
        self.a2.rows()
    }

    fn forward(&self, theta: &[f64]) -> Result<Vector> {
        let h = self.a1.mat_vec(theta)?;
        let c: Vector = h.iter().map(|&x| celu(x)).collect();
        Ok(softmax(&self.a2.mat_vec(&c)?))
    }

    fn jacobian(&self, theta: &[f64]) -> Result<Matrix> {
        let h = self.a1.mat_vec(theta)?;
        let c: Vector = h.iter().map(|&x| celu(x)).collect();
        let p = softmax(&self.a2.mat_vec(&c)?);
        let k = p.len();
        // (diag(p) - p pᵀ) A2 diag(celu'(h)) A1
        let mut sm = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                sm[(i, j)] = if i == j {
                    p[i] - p[i] * p[j]
                } else {
                    -p[i] * p[j]
                };
            }
        }
        let mut inner = self.a1.clone();
        for (r, &x) in h.iter().enumerate() {
            let dc = celu_prime(x);
            for j in 0..inner.cols() {
                inner[(r, j)] *= dc;
            }
        }
        sm.matmul(&self.a2)?.matmul(&inner)
    }
}

/// Independent players stacked: `g(θ¹, θ², …) = (h¹(θ¹), h²(θ²), …)`.
pub struct ProductModel {
    parts: Vec<Box<dyn PredictionModel>>,
}

impl ProductModel {
    pub fn new(parts: Vec<Box<dyn PredictionModel>>) -> Self {
        Self { parts }
    }

    pub fn parts(&self) -> &[Box<dyn PredictionModel>] {
        &self.parts
    }

    fn split<'a>(&self, v: &'a [f64], by_params: bool) -> Vec<&'a [f64]> {
        let mut out = Vec::with_capacity(self.parts.len());
        let mut off = 0;
        for p in &self.parts {
            let len = if by_params {
                p.param_dim()
            } else {
                p.output_dim()
            };
            out.push(&v[off..off + len]);
            off += len;
        }
        out
    }
}

impl PredictionModel for ProductModel {
    fn param_dim(&self) -> usize {
        self.parts.iter().map(|p| p.param_dim()).sum()
    }

    fn output_dim(&self) -> usize {
        self.parts.iter().map(|p| p.output_dim()).sum()
    }

    fn forward(&self, theta: &[f64]) -> Result<Vector> {
        check_len(self.param_dim(), theta.len(), "product model parameters")?;
        let mut out = Vec::with_capacity(self.output_dim());
        for (p, th) in self.parts.iter().zip(self.split(theta, true)) {
            out.extend(p.forward(th)?);
        }
        Ok(out)
    }

    fn jacobian(&self, theta: &[f64]) -> Result<Matrix> {
        check_len(self.param_dim(), theta.len(), "product model parameters")?;
        let mut j = Matrix::zeros(self.output_dim(), self.param_dim());
        let (mut r0, mut c0) = (0, 0);
        for (p, th) in self.parts.iter().zip(self.split(theta, true)) {
            let block = p.jacobian(th)?;
            for i in 0..block.rows() {
                for k in 0..block.cols() {
                    j[(r0 + i, c0 + k)] = block[(i, k)];
                }
            }
            r0 += block.rows();
            c0 += block.cols();
        }
        Ok(j)
    }

    fn vjp(&self, theta: &[f64], u: &[f64]) -> Result<Vector> {
        check_len(self.param_dim(), theta.len(), "product model parameters")?;
        check_len(self.output_dim(), u.len(), "vjp cotangent")?;
        let mut out = Vec::with_capacity(theta.len());
        for ((p, th), ui) in self
            .parts
            .iter()
            .zip(self.split(theta, true))
            .zip(self.split(u, false))
        {
            out.extend(p.vjp(th, ui)?);
        }
        Ok(out)
    }

    fn image_closure(&self) -> Option<DomainSpec> {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for p in &self.parts {
            match p.image_closure()? {
                DomainSpec::Box { lower: l, upper: u } => {
                    lower.extend(l);
                    upper.extend(u);
                }
                _ => return None,
            }
        }
        Some(DomainSpec::Box { lower, upper })
    }
}

/// Two-layer tanh value network evaluated on a fixed table of state features.
///
/// Parameter layout: `W1` (hidden × input, row-major), `b1` (hidden),
/// `w2` (hidden), `b2` (scalar). Prediction `i` is
/// `w2 · tanh(W1 x_i + b1) + b2`.
#[derive(Debug, Clone)]
pub struct MlpValueNet {
    features: Matrix,
    hidden: usize,
}

pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

impl MlpValueNet {
    pub fn new(features: Matrix, hidden: usize) -> Self {
        Self { features, hidden }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_states(&self) -> usize {
        self.features.rows()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Uniform `[-1/√fan_in, 1/√fan_in]` initialization per layer.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let (h, inp) = (self.hidden, self.input_dim());
        let b_in = 1.0 / (inp as f64).sqrt();
        let b_hid = 1.0 / (h as f64).sqrt();
        let mut theta = Vec::with_capacity(self.param_dim());
        for _ in 0..h * inp + h {
            theta.push(rng.random_range(-b_in..=b_in));
        }
        for _ in 0..h + 1 {
            theta.push(rng.random_range(-b_hid..=b_hid));
        }
        theta
    }

    fn hidden_act(&self, theta: &[f64], state: usize) -> Vector {
        let (h, inp) = (self.hidden, self.input_dim());
        let x = self.features.row(state);
        let b1 = &theta[h * inp..h * inp + h];
        (0..h)
            .map(|k| (linalg::dot(&theta[k * inp..(k + 1) * inp], x) + b1[k]).tanh())
            .collect()
    }

    fn readout<'a>(&self, theta: &'a [f64]) -> (&'a [f64], f64) {
        let (h, inp) = (self.hidden, self.input_dim());
        let off = h * inp + h;
        (&theta[off..off + h], theta[off + h])
    }

    /// Prediction for a single state.
    pub fn value(&self, theta: &[f64], state: usize) -> Result<f64> {
        check_len(self.param_dim(), theta.len(), "value net parameters")?;
        let a = self.hidden_act(theta, state);
        let (w2, b2) = self.readout(theta);
        Ok(linalg::dot(w2, &a) + b2)
    }

    /// Accumulates `scale · ∇_θ V(state)` into `grad` and returns `V(state)`.
    pub fn accumulate_grad(
        &self,
        theta: &[f64],
        state: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        check_len(self.param_dim(), theta.len(), "value net parameters")?;
        check_len(self.param_dim(), grad.len(), "value net gradient")?;
        let (h, inp) = (self.hidden, self.input_dim());
        let a = self.hidden_act(theta, state);
        let (w2, b2) = self.readout(theta);
        let x = self.features.row(state);
        let value = linalg::dot(w2, &a) + b2;
        if scale == 0.0 {
            return Ok(value);
        }
        let off2 = h * inp + h;
        for k in 0..h {
            let back = scale * w2[k] * (1.0 - a[k] * a[k]);
            for (g, &xv) in grad[k * inp..(k + 1) * inp].iter_mut().zip(x) {
                *g += back * xv;
            }
            grad[h * inp + k] += back;
            grad[off2 + k] += scale * a[k];
        }
        grad[off2 + h] += scale;
        Ok(value)
    }
}

impl PredictionModel for MlpValueNet {
    fn param_dim(&self) -> usize {
        self.hidden * self.input_dim() + 2 * self.hidden + 1
    }

    fn output_dim(&self) -> usize {
        self.num_states()
    }

    fn forward(&self, theta: &[f64]) -> Result<Vector> {
        check_len(self.param_dim(), theta.len(), "value net parameters")?;
        (0..self.num_states())
            .map(|s| self.value(theta, s))
            .collect()
    }

    fn jacobian(&self, theta: &[f64]) -> Result<Matrix> {
        check_len(self.param_dim(), theta.len(), "value net parameters")?;
        let d = self.param_dim();
        let mut j = Matrix::zeros(self.num_states(), d);
        let mut row = vec![0.0; d];
        for s in 0..self.num_states() {
            row.iter_mut().for_each(|v| *v = 0.0);
            self.accumulate_grad(theta, s, 1.0, &mut row)?;
            for (k, &v) in row.iter().enumerate() {
                j[(s, k)] = v;
            }
        }
        Ok(j)
    }

    fn vjp(&self, theta: &[f64], u: &[f64]) -> Result<Vector> {
        check_len(self.param_dim(), theta.len(), "value net parameters")?;
        check_len(self.num_states(), u.len(), "vjp cotangent")?;
        let mut grad = vec![0.0; self.param_dim()];
        for (s, &us) in u.iter().enumerate() {
            if us != 0.0 {
                self.accumulate_grad(theta, s, us, &mut grad)?;
            }
        }
        Ok(grad)
    }
}

/// Square roots of the extreme eigenvalues of `Dg(θ)ᵀDg(θ)`.
pub fn singular_bounds(model: &dyn PredictionModel, theta: &[f64]) -> Result<(f64, f64)> {
    let (lo, hi) = linalg::sym_extreme_eigs(&model.jacobian(theta)?.gram())?;
    Ok((lo.max(0.0).sqrt(), hi.max(0.0).sqrt()))
}

/// Central-difference Jacobian with step `h`.
pub fn finite_difference_jacobian(
    model: &dyn PredictionModel,
    theta: &[f64],
    h: f64,
) -> Result<Matrix> {
    let (n, d) = (model.output_dim(), model.param_dim());
    check_len(d, theta.len(), "finite difference parameters")?;
    let mut j = Matrix::zeros(n, d);
    let mut tp = theta.to_vec();
    for k in 0..d {
        tp[k] = theta[k] + h;
        let fp = model.forward(&tp)?;
        tp[k] = theta[k] - h;
        let fm = model.forward(&tp)?;
        tp[k] = theta[k];
        for i in 0..n {
            j[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// Largest entrywise gap between the analytic and central-difference
/// Jacobians, relative to the largest analytic entry.
pub fn jacobian_fd_error(model: &dyn PredictionModel, theta: &[f64], h: f64) -> Result<f64> {
    let analytic = model.jacobian(theta)?;
    let numeric = finite_difference_jacobian(model, theta, h)?;
    let gap = analytic.sub(&numeric)?.max_abs();
    let scale = analytic.max_abs().max(numeric.max_abs());
    if scale == 0.0 {
        return Ok(gap);
    }
    if !gap.is_finite() {
        return Err(Error::NonFinite("jacobian check"));
    }
    Ok(gap / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vector {
        (0..n)
            .map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect()
    }

    #[test]
    fn scalar_forward_examples() {
        let m = ScalarSigmoidCelu::new(0.5, 1.0);
        assert_eq!(m.forward(&[0.0]).unwrap(), vec![0.5]);
        let v = m.forward(&[1.25]).unwrap()[0];
        assert!((v - 1.0 / (1.0 + (-0.625f64).exp())).abs() < 1e-15);
        assert!((v - 0.651355).abs() < 1e-6);
    }

    #[test]
    fn scalar_jacobian_at_zero() {
        let j = ScalarSigmoidCelu::new(0.5, 1.0).jacobian(&[0.0]).unwrap();
        assert!((j[(0, 0)] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn scalar_output_in_unit_interval() {
        let m = ScalarSigmoidCelu::new(0.9, -0.7);
        for t in [-50.0, -3.0, 0.0, 2.0, 40.0] {
            let v = m.forward(&[t]).unwrap()[0];
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn scalar_image_closure() {
        let m = ScalarSigmoidCelu::new(0.5, 1.0);
        match m.image_closure().unwrap() {
            DomainSpec::Box { lower, upper } => {
                assert!((lower[0] - sigmoid(-1.0)).abs() < 1e-15);
                assert_eq!(upper[0], 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(ScalarSigmoidCelu::new(0.0, 1.0).image_closure().is_none());
    }

    #[test]
    fn linear_model_examples() {
        let m = LinearModel::new(Matrix::identity(3));
        assert_eq!(m.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let phi = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let m = LinearModel::new(phi.clone());
        assert_eq!(m.jacobian(&[0.3, -2.0]).unwrap(), phi);
        assert_eq!(m.vjp(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(m.vjp(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn linear_surjectivity() {
        assert_eq!(
            LinearModel::new(Matrix::identity(2)).image_closure(),
            Some(DomainSpec::AllSpace)
        );
        let tall = Matrix::from_rows(&[vec![1.0], vec![1.0]]);
        assert_eq!(LinearModel::new(tall).image_closure(), None);
    }

    #[test]
    fn singular_bounds_examples() {
        let (lo, hi) =
            singular_bounds(&LinearModel::new(Matrix::identity(2)), &[0.0, 0.0]).unwrap();
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 1.0).abs() < 1e-14);
        let (lo, hi) = singular_bounds(
            &LinearModel::new(Matrix::from_diag(&[2.0, 3.0])),
            &[0.0, 0.0],
        )
        .unwrap();
        assert!((lo - 2.0).abs() < 1e-14 && (hi - 3.0).abs() < 1e-14);
    }

    #[test]
    fn softmax_singular_bounds_match_eigensolver_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = SoftmaxMlp::random(&mut rng);
        let theta = vec![0.0; 5];
        let (lo, hi) = singular_bounds(&m, &theta).unwrap();
        let j = m.jacobian(&theta).unwrap();
        let jn = nalgebra::DMatrix::from_row_slice(3, 5, j.values());
        let sv = jn.singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        assert!((hi - smax).abs() < 1e-10);
        // rank ≤ 2 < 5 parameters: Gram has a zero eigenvalue
        assert!(lo < 1e-6);
    }

    #[test]
    fn softmax_outputs_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = SoftmaxMlp::random(&mut rng);
            let p = m.forward(&gaussian(&mut rng, 5, 3.0)).unwrap();
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sm = SoftmaxMlp::random(&mut rng);
        let sc = ScalarSigmoidCelu::new(0.5, 1.0);
        let net = MlpValueNet::new(Matrix::new(6, 3, gaussian(&mut rng, 18, 1.0)).unwrap(), 5);
        for _ in 0..20 {
            let t5 = gaussian(&mut rng, 5, 1.0);
            assert!(jacobian_fd_error(&sm, &t5, 1e-5).unwrap() <= 1e-5);
            let t1 = gaussian(&mut rng, 1, 2.0);
            assert!(jacobian_fd_error(&sc, &t1, 1e-5).unwrap() <= 1e-5);
            let tn = net.init_params(&mut rng);
            assert!(jacobian_fd_error(&net, &tn, 1e-5).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn product_jacobian_is_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prod = ProductModel::new(vec![
            Box::new(SoftmaxMlp::random(&mut rng)),
            Box::new(SoftmaxMlp::random(&mut rng)),
        ]);
        assert_eq!((prod.param_dim(), prod.output_dim()), (10, 6));
        let j = prod.jacobian(&gaussian(&mut rng, 10, 1.0)).unwrap();
        for i in 0..6 {
            for k in 0..10 {
                if (i < 3) != (k < 5) {
                    assert_eq!(j[(i, k)], 0.0);
                }
            }
        }
    }

    #[test]
    fn value_net_vjp_matches_dense_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = MlpValueNet::new(Matrix::new(7, 4, gaussian(&mut rng, 28, 1.0)).unwrap(), 6);
        for _ in 0..10 {
            let theta = net.init_params(&mut rng);
            let u = gaussian(&mut rng, 7, 1.0);
            let fast = net.vjp(&theta, &u).unwrap();
            let dense = net.jacobian(&theta).unwrap().tr_mat_vec(&u).unwrap();
            let gap = linalg::norm(&linalg::sub(&fast, &dense));
            assert!(gap <= 1e-10);
        }
    }

    #[test]
    fn value_net_init_within_fan_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = MlpValueNet::new(Matrix::zeros(3, 4), 16);
        let theta = net.init_params(&mut rng);
        assert_eq!(theta.len(), 16 * 4 + 2 * 16 + 1);
        assert!(theta[..16 * 4 + 16].iter().all(|v| v.abs() <= 0.5));
        assert!(theta[16 * 4 + 16..].iter().all(|v| v.abs() <= 0.25));
    }
}
