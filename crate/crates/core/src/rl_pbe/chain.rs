use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::vi_problems::LinearBellmanOperator;

/// A finite Markov reward process under a fixed policy.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    p: Matrix,
    r: Vector,
    gamma: f64,
    xi: Vector,
    /// Nonzero successors of each state with cumulative probabilities.
    cdf: Vec<Vec<(usize, f64)>>,
}

impl MarkovChain {
    pub fn new(p: Matrix, r: Vector, gamma: f64) -> Result<Self> {
        let n = p.rows();
        check_len(n, p.cols(), "transition matrix")?;
        check_len(n, r.len(), "reward vector")?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} not in [0, 1)")));
        }
        for i in 0..n {
            let row = p.row(i);
            if row.iter().any(|&v| v < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "row {i} is not a distribution"
                )));
            }
        }
        let xi = stationary_distribution(&p)?;
        let cdf = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                p.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(j, &v)| {
                        acc += v;
                        (j, acc)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            p,
            r,
            gamma,
            xi,
            cdf,
        })
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn operator(&self) -> LinearBellmanOperator {
        LinearBellmanOperator::new(self.xi.clone(), self.p.clone(), self.r.clone(), self.gamma)
            .expect("validated chain")
    }

    /// `(I − γP)⁻¹ r`.
    pub fn true_values(&self) -> Result<Vector> {
        linalg::solve_lu(&self.p.scale(-self.gamma).add_diag(1.0), &self.r)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let row = &self.cdf[s];
        let u: f64 = rng.random::<f64>() * row.last().map_or(1.0, |e| e.1);
        row.iter()
            .find(|e| u < e.1)
            .unwrap_or(&row[row.len() - 1])
            .0
    }
}

/// Solves `ξᵀP = ξᵀ`, `Σξ = 1` directly.
pub fn stationary_distribution(p: &Matrix) -> Result<Vector> {
    let n = p.rows();
    let mut a = p.transpose().scale(-1.0).add_diag(1.0);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    let mut xi = linalg::solve_lu(&a, &b)?;
    for v in xi.iter_mut() {
        *v = v.max(0.0);
    }
    let s: f64 = xi.iter().sum();
    Ok(xi.into_iter().map(|v| v / s).collect())
}

/// Lazy ring walk with chords: stay with probability `hold`, otherwise move
/// to the left neighbor, the right neighbor or one seeded chord target with
/// seeded weights. Rewards are uniform on `[0, 1]`.
pub fn make_slow_mixing_chain(n: usize, hold: f64, gamma: f64, seed: u64) -> Result<MarkovChain> {
    if n < 2 {
        return Err(Error::InvalidConfig("chain needs at least 2 states".into()));
    }
    if !(0.0..1.0).contains(&hold) {
        return Err(Error::InvalidConfig(format!("hold {hold} not in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        let w: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let tot: f64 = w.iter().sum();
        let chord = (i + 1 + rng.random_range(0..n - 1)) % n;
        p[(i, i)] += hold;
        p[(i, (i + n - 1) % n)] += (1.0 - hold) * w[0] / tot;
        p[(i, (i + 1) % n)] += (1.0 - hold) * w[1] / tot;
        p[(i, chord)] += (1.0 - hold) * w[2] / tot;
    }
    let r = (0..n).map(|_| rng.random::<f64>()).collect();
    MarkovChain::new(p, r, gamma)
}

/// `|λ₂|` of the transition matrix via power iteration on `P − 1ξᵀ`.
pub fn second_eigen_modulus(mc: &MarkovChain, iters: usize) -> Result<f64> {
    let n = mc.n();
    let mut x: Vector = (0..n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
    let mut log_norm = 0.0;
    let burn = iters / 2;
    let mut tail = 0.0;
    for k in 0..iters {
        let px = mc.p.mat_vec(&x)?;
        let proj = linalg::dot(&mc.xi, &x);
        x = px.iter().map(|v| v - proj).collect();
        let nx = linalg::norm(&x);
        if nx == 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().for_each(|v| *v /= nx);
        log_norm += nx.ln();
        if k + 1 == burn {
            tail = log_norm;
        }
    }
    Ok(((log_norm - tail) / (iters - burn) as f64).exp())
}

/// `T(z) = r + γPz`.
pub fn bellman_apply(mc: &MarkovChain, z: &[f64]) -> Result<Vector> {
    check_len(mc.n(), z.len(), "value vector")?;
    let pz = mc.p.mat_vec(z)?;
    Ok(mc
        .r
        .iter()
        .zip(&pz)
        .map(|(r, v)| r + mc.gamma * v)
        .collect())
}

/// `F(z) = Ξ(z − T(z))`.
pub fn pbe_operator(mc: &MarkovChain, z: &[f64]) -> Result<Vector> {
    let tz = bellman_apply(mc, z)?;
    Ok((0..z.len()).map(|i| mc.xi[i] * (z[i] - tz[i])).collect())
}

/// Linear value features `Φ` (one row per state).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: Matrix,
}

impl FeatureMap {
    pub fn new(phi: Matrix) -> Result<Self> {
        if phi.cols() > phi.rows() {
            return Err(Error::InvalidConfig(
                "feature dimension exceeds state count".into(),
            ));
        }
        Ok(Self { phi })
    }

    /// Seeded Gaussian features with orthonormalized columns.
    pub fn gaussian(n: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Matrix::new(
            n,
            d,
            (0..n * d).map(|_| rng.sample(StandardNormal)).collect(),
        )?;
        Self::new(linalg::orthonormalize_columns(&raw)?)
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn dim(&self) -> usize {
        self.phi.cols()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.phi.row(s)
    }
}

/// `Φᵀ diag(w) M` for an `n × k` matrix `M`.
pub(crate) fn weighted_cross(phi: &Matrix, w: &[f64], m: &Matrix) -> Matrix {
    let (n, d, k) = (phi.rows(), phi.cols(), m.cols());
    let mut out = Matrix::zeros(d, k);
    for s in 0..n {
        if w[s] == 0.0 {
            continue;
        }
        for a in 0..d {
            let fa = w[s] * phi[(s, a)];
            if fa == 0.0 {
                continue;
            }
            for b in 0..k {
                out[(a, b)] += fa * m[(s, b)];
            }
        }
    }
    out
}

/// θ* solving `ΦᵀΞ(Φ − γPΦ)θ = ΦᵀΞr`.
pub fn exact_linear_fixed_point(mc: &MarkovChain, fm: &FeatureMap) -> Result<Vector> {
    let phi = fm.phi();
    check_len(mc.n(), phi.rows(), "feature rows")?;
    let pphi = mc.p.matmul(phi)?;
    let a = weighted_cross(phi, &mc.xi, &phi.sub(&pphi.scale(mc.gamma))?);
    let r_col = Matrix::new(mc.n(), 1, mc.r.clone())?;
    let b = weighted_cross(phi, &mc.xi, &r_col);
    linalg::solve_lu(&a, b.values())
}

/// One observed step `(s_t, r_t, s_{t+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub step: usize,
    pub state: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Streaming sampler along a single trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySampler {
    rng: ChaCha8Rng,
    state: usize,
    step: usize,
}

impl TrajectorySampler {
    pub fn new(start_state: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: start_state,
            step: 0,
        }
    }

    pub fn next_transition(&mut self, mc: &MarkovChain) -> Transition {
        let next = mc.sample_next(self.state, &mut self.rng);
        let tr = Transition {
            step: self.step,
            state: self.state,
            reward: mc.r[self.state],
            next_state: next,
        };
        self.state = next;
        self.step += 1;
        tr
    }
}

pub fn simulate_trajectory(
    mc: &MarkovChain,
    start_state: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<Transition>> {
    if length == 0 {
        return Err(Error::InvalidConfig("trajectory length must be ≥ 1".into()));
    }
    if start_state >= mc.n() {
        return Err(Error::DimensionMismatch {
            expected: mc.n(),
            got: start_state,
            context: "start state out of range",
        });
    }
    let mut sampler = TrajectorySampler::new(start_state, seed);
    Ok((0..length).map(|_| sampler.next_transition(mc)).collect())
}
