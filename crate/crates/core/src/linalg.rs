//! Small dense linear algebra.
//!
//! Everything here works on row-major `f64` storage and is sized for the
//! problems in this crate: parameter dimensions of at most a few hundred.
//! The pseudo-inverse goes through a cyclic Jacobi eigendecomposition of the
//! Gram matrix instead of a full SVD.

use std::ops::{Index, IndexMut};

use crate::error::{check_len, Error, Result};

/// Dense vectors are plain `Vec<f64>`.
pub type Vector = Vec<f64>;

/// Default relative rank cutoff for [`pinv_solve`].
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        check_len(rows * cols, values.len(), "matrix storage")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            values.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len(self.cols, other.rows, "matmul inner dimension")?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.values[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `m · v`.
    pub fn mat_vec(&self, v: &[f64]) -> Result<Vector> {
        check_len(self.cols, v.len(), "mat_vec")?;
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `mᵀ · v`, without forming the transpose.
    pub fn tr_mat_vec(&self, v: &[f64]) -> Result<Vector> {
        check_len(self.rows, v.len(), "tr_mat_vec")?;
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    /// `mᵀ m`.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                if r[a] == 0.0 {
                    continue;
                }
                for b in a..self.cols {
                    g.values[a * self.cols + b] += r[a] * r[b];
                }
            }
        }
        for a in 0..self.cols {
            for b in 0..a {
                g.values[a * self.cols + b] = g.values[b * self.cols + a];
            }
        }
        g
    }

    /// `mᵀ diag(w) m`.
    pub fn weighted_gram(&self, w: &[f64]) -> Result<Matrix> {
        check_len(self.rows, w.len(), "weighted_gram")?;
        let mut g = Matrix::zeros(self.cols, self.cols);
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let r = self.row(i);
            for a in 0..self.cols {
                let ra = wi * r[a];
                for (b, rb) in r.iter().enumerate().skip(a) {
                    g.values[a * self.cols + b] += ra * rb;
                }
            }
        }
        for a in 0..self.cols {
            for b in 0..a {
                g.values[a * self.cols + b] = g.values[b * self.cols + a];
            }
        }
        Ok(g)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        check_len(self.rows, other.rows, "matrix add rows")?;
        check_len(self.cols, other.cols, "matrix add cols")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// Adds `lambda` to every diagonal entry.
    pub fn add_diag(&self, lambda: f64) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out[(i, i)] += lambda;
        }
        out
    }

    /// `(m + mᵀ)/2`.
    pub fn symmetric_part(&self) -> Matrix {
        let mut s = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                s[(i, j)] = 0.5 * (self[(i, j)] + self[(j, i)]);
            }
        }
        s
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[i * self.cols + j]
    }
}

pub fn mat_vec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    m.mat_vec(v)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vector {
    a.iter().map(|x| x * s).collect()
}

/// `a + s·b`.
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Lower-triangular Cholesky factor `L` with `a = L Lᵀ`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    check_len(a.rows, a.cols, "cholesky of non-square matrix")?;
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot: diag,
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `a x = b` for symmetric positive-definite `a` by Cholesky.
///
/// A non-positive pivot is reported as [`Error::NotPositiveDefinite`]; callers
/// that want regularization must add it themselves.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vector> {
    check_len(a.rows, b.len(), "solve_spd rhs")?;
    let l = cholesky(a)?;
    let n = a.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

/// Solves a general square system by Gaussian elimination with partial pivoting.
pub fn solve_lu(a: &Matrix, b: &[f64]) -> Result<Vector> {
    check_len(a.rows, a.cols, "solve_lu of non-square matrix")?;
    check_len(a.rows, b.len(), "solve_lu rhs")?;
    let n = a.rows;
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&p, &q| m[(p, col)].abs().total_cmp(&m[(q, col)].abs()))
            .unwrap_or(col);
        if m[(piv, col)].abs() <= 1e-14 * scale {
            return Err(Error::Singular);
        }
        if piv != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            x.swap(col, piv);
        }
        for r in col + 1..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[(r, j)] -= f * m[(col, j)];
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Ok(x)
}

/// Symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in ascending order.
    pub values: Vector,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    check_len(a.rows, a.cols, "sym_eigen of non-square matrix")?;
    let n = a.rows;
    let mut m = a.symmetric_part();
    let mut v = Matrix::identity(n);
    let total = m.frobenius();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= 1e-300 || off.sqrt() <= 1e-17 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// Minimum-norm least-squares solution of `j x ≈ b`.
///
/// Eigenvalues of `jᵀj` below `tol · λ_max` are treated as zero.
pub fn pinv_solve(j: &Matrix, b: &[f64], tol: f64) -> Result<Vector> {
    check_len(j.rows, b.len(), "pinv_solve rhs")?;
    let eig = sym_eigen(&j.gram())?;
    let lmax = eig.values.last().copied().unwrap_or(0.0);
    if lmax <= f64::MIN_POSITIVE {
        return Err(Error::ZeroMatrix);
    }
    let jtb = j.tr_mat_vec(b)?;
    let cutoff = tol * lmax;
    let d = j.cols;
    let mut x = vec![0.0; d];
    for k in 0..d {
        let lam = eig.values[k];
        if lam <= cutoff {
            continue;
        }
        let vk = eig.vectors.column(k);
        let coef = dot(&vk, &jtb) / lam;
        for (xi, vi) in x.iter_mut().zip(&vk) {
            *xi += coef * vi;
        }
    }
    Ok(x)
}

/// Spectral radius estimate.
///
/// 2×2 matrices use the closed-form eigenvalue formula. Larger matrices
/// return `sqrt(λ_max(mᵀm))` from power iteration, i.e. the operator norm,
/// which bounds the spectral radius from above and equals it for normal
/// matrices.
pub fn spectral_radius(m: &Matrix, iters: usize) -> Result<f64> {
    check_len(m.rows, m.cols, "spectral_radius of non-square matrix")?;
    if m.rows == 2 {
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let half_tr = 0.5 * (a + d);
        let det = a * d - b * c;
        let disc = half_tr * half_tr - det;
        return Ok(if disc >= 0.0 {
            let r = disc.sqrt();
            (half_tr + r).abs().max((half_tr - r).abs())
        } else {
            // complex pair: |λ|² = det
            det.sqrt()
        });
    }
    operator_norm(m, iters)
}

/// `sqrt(λ_max(mᵀm))` by power iteration.
pub fn operator_norm(m: &Matrix, iters: usize) -> Result<f64> {
    let g = m.gram();
    let n = g.rows;
    if n == 0 || g.max_abs() == 0.0 {
        return Ok(0.0);
    }
    // deterministic start with all components populated
    let mut x: Vector = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let y = g.mat_vec(&x)?;
        let ny = norm(&y);
        if ny == 0.0 {
            return Ok(0.0);
        }
        lambda = dot(&x, &y);
        x = scale(&y, 1.0 / ny);
    }
    Ok(lambda.max(0.0).sqrt())
}

/// Extreme eigenvalues `(λ_min, λ_max)` of a symmetric matrix.
pub fn sym_extreme_eigs(a: &Matrix) -> Result<(f64, f64)> {
    let e = sym_eigen(a)?;
    let lo = e.values.first().copied().unwrap_or(0.0);
    let hi = e.values.last().copied().unwrap_or(0.0);
    Ok((lo, hi))
}

/// Modified Gram-Schmidt orthonormalization of the columns of `a`.
pub fn orthonormalize_columns(a: &Matrix) -> Result<Matrix> {
    let mut cols: Vec<Vector> = (0..a.cols).map(|j| a.column(j)).collect();
    for j in 0..cols.len() {
        for k in 0..j {
            let proj = dot(&cols[j], &cols[k]);
            let ck = cols[k].clone();
            cols[j] = axpy(&cols[j], -proj, &ck);
        }
        let nj = norm(&cols[j]);
        if nj <= 1e-12 {
            return Err(Error::Singular);
        }
        cols[j].iter_mut().for_each(|v| *v /= nj);
    }
    let mut out = Matrix::zeros(a.rows, a.cols);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        let vals = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(r, c, vals).unwrap()
    }

    #[test]
    fn mat_vec_examples() {
        assert_eq!(
            mat_vec(&Matrix::identity(2), &[3.0, 4.0]).unwrap(),
            vec![3.0, 4.0]
        );
        let eta = 0.1;
        let p = Matrix::from_rows(&[vec![0.0, eta], vec![-eta, 0.0]]);
        assert_eq!(p.mat_vec(&[1.0, 0.0]).unwrap(), vec![0.0, -0.1]);
        let f = Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 1.0]]);
        assert_eq!(f.mat_vec(&[1.0, 1.0]).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn mat_vec_dimension_mismatch() {
        let err = Matrix::identity(3).mat_vec(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn matrix_rejects_non_finite() {
        assert_eq!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]).unwrap_err(),
            Error::NonFinite("matrix entries")
        );
    }

    #[test]
    fn solve_spd_examples() {
        let x = solve_spd(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
        let x = solve_spd(&Matrix::from_diag(&[2.0, 4.0]), &[2.0, 4.0]).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() <= 1e-15));
    }

    #[test]
    fn solve_spd_random_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m = random_matrix(&mut rng, 4, 4);
            let a = m.gram().add_diag(1.0);
            let b: Vector = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x = solve_spd(&a, &b).unwrap();
            let r = sub(&a.mat_vec(&x).unwrap(), &b);
            assert!(norm(&r) <= 1e-9 * norm(&b));
        }
    }

    #[test]
    fn solve_spd_rejects_indefinite() {
        let a = Matrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(
            solve_spd(&a, &[1.0, 1.0]),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
        assert!(matches!(
            solve_spd(&Matrix::zeros(2, 2), &[1.0, 1.0]),
            Err(Error::NotPositiveDefinite { index: 0, .. })
        ));
    }

    #[test]
    fn pinv_examples() {
        let x = pinv_solve(&Matrix::identity(2), &[1.0, 2.0], DEFAULT_RANK_TOL).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        let j = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let x = pinv_solve(&j, &[3.0, 4.0], DEFAULT_RANK_TOL).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-14 && x[1].abs() < 1e-14);
    }

    #[test]
    fn pinv_zero_matrix() {
        assert_eq!(
            pinv_solve(&Matrix::zeros(3, 2), &[1.0, 1.0, 1.0], DEFAULT_RANK_TOL).unwrap_err(),
            Error::ZeroMatrix
        );
    }

    #[test]
    fn pinv_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let j = random_matrix(&mut rng, 5, 3);
            let b: Vector = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = pinv_solve(&j, &b, DEFAULT_RANK_TOL).unwrap();
            // normal-equations oracle through the Cholesky route
            let oracle = solve_spd(&j.gram(), &j.tr_mat_vec(&b).unwrap()).unwrap();
            let rel = norm(&sub(&x, &oracle)) / norm(&oracle);
            assert!(rel <= 1e-8, "rel error {rel}");
        }
    }

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&Matrix::identity(2), 50).unwrap(), 1.0);
        for eta in [0.01, 0.1, 1.0_f64] {
            let m = Matrix::from_rows(&[vec![1.0, -eta], vec![eta, 1.0]]);
            let r = spectral_radius(&m, 50).unwrap();
            assert!((r - (1.0 + eta * eta).sqrt()).abs() < 1e-9);
        }
        assert!(
            (spectral_radius(&Matrix::from_rows(&[vec![1.0, -0.1], vec![0.1, 1.0]]), 1).unwrap()
                - 1.004_987_562_112_089)
                .abs()
                < 1e-9
        );
        assert_eq!(spectral_radius(&Matrix::zeros(3, 3), 10).unwrap(), 0.0);
    }

    #[test]
    fn operator_norm_of_diagonal() {
        let m = Matrix::from_diag(&[1.0, -3.0, 2.0]);
        assert!((spectral_radius(&m, 500).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 6, 6).symmetric_part();
        let e = sym_eigen(&m).unwrap();
        let lam = Matrix::from_diag(&e.values);
        let rec = e
            .vectors
            .matmul(&lam)
            .unwrap()
            .matmul(&e.vectors.transpose())
            .unwrap();
        assert!(rec.sub(&m).unwrap().max_abs() < 1e-12);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn lu_solves_nonsymmetric() {
        let a = Matrix::from_rows(&[vec![0.0, 2.0], vec![1.0, 1.0]]);
        let x = solve_lu(&a, &[4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        assert_eq!(
            solve_lu(&Matrix::zeros(2, 2), &[1.0, 1.0]).unwrap_err(),
            Error::Singular
        );
    }

    #[test]
    fn gram_schmidt_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = orthonormalize_columns(&random_matrix(&mut rng, 8, 3)).unwrap();
        let g = q.gram();
        assert!(g.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-12);
    }
}
