//! Small dense matrices and spectral calculus on symmetric matrices.
//!
//! Every matrix function used by the model (square roots, hyperbolic
//! functions of `phi^{1/2}`, exponentials) goes through the symmetric
//! eigendecomposition computed here with cyclic Jacobi rotations. The
//! dimensions involved are tiny (n <= 10), so a dense row-major
//! representation is used throughout.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};

/// Eigenvalues in `[-PSD_TOL, 0)` are treated as zero by PSD-requiring operations.
pub const PSD_TOL: f64 = 1e-10;

/// Below this eigenvalue `sinhc_sqrt` switches to its Taylor branch.
pub const EIG_CUT: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;
const SINGULAR_DET: f64 = 1e-300;

/// Square real matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    /// Outer product `u v^T`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let n = u.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = u[i] * v[j];
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest `|m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// `tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &Matrix) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for k in 0..self.n {
                s += self[(i, k)] * other[(k, i)];
            }
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.n, rhs.n, "matrix dimension mismatch");
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self[(i, k)];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += aik * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.n, rhs.n, "matrix dimension mismatch");
        Matrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.n, rhs.n, "matrix dimension mismatch");
        Matrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// A matrix whose symmetry has been checked (and made exact).
#[derive(Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl SymMatrix {
    /// Accepts `m` if `|m_ij - m_ji| <= 1e-12 * max(1, max|m|)`, then averages
    /// the two triangles so the stored matrix is exactly symmetric.
    pub fn new(m: Matrix) -> Result<Self> {
        let asym = m.asymmetry();
        if !(asym <= SYMMETRY_TOL * m.max_abs().max(1.0)) {
            return Err(Error::NonSymmetric { asymmetry: asym });
        }
        Ok(Self::symmetrized(&m))
    }

    /// Symmetric part `(m + m^T) / 2`, with no tolerance check.
    pub fn symmetrized(m: &Matrix) -> Self {
        let n = m.dim();
        let mut s = m.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        Self(s)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n))
    }

    pub fn from_diag(d: &[f64]) -> Self {
        Self(Matrix::from_diag(d))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        Self(&self.0 - &other.0)
    }

    /// `B^T self B`, symmetric by construction.
    pub fn congruence(&self, b: &Matrix) -> Self {
        Self::symmetrized(&(&(&b.transpose() * &self.0) * b))
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

/// `M = Q diag(d) Q^T` with ascending `d` and orthonormal columns in `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomp {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SpectralDecomp {
    /// `Q diag(g) Q^T` for an arbitrary diagonal `g`.
    pub fn compose(&self, g: &[f64]) -> SymMatrix {
        let q = &self.eigenvectors;
        let n = q.dim();
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += q[(i, k)] * g[k] * q[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        SymMatrix(out)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> SymMatrix {
        let g: Vec<f64> = self.eigenvalues.iter().map(|&d| f(d)).collect();
        self.compose(&g)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.compose(&self.eigenvalues)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// Eigenvalues with round-off negatives in `[-PSD_TOL, 0)` set to zero.
    pub fn clipped_psd_eigenvalues(&self) -> Result<Vec<f64>> {
        let min = self.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(self.eigenvalues.iter().map(|&d| d.max(0.0)).collect())
    }
}

/// Cyclic Jacobi eigendecomposition.
pub fn sym_eigen(m: &SymMatrix) -> SpectralDecomp {
    let n = m.dim();
    let mut a = m.as_matrix().clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off.sqrt() <= JACOBI_TOL * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
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
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[(k, col)] = v[(k, src)];
        }
    }
    SpectralDecomp {
        eigenvalues,
        eigenvectors,
    }
}

/// `Q diag(f(d)) Q^T`; fails if `f` is not finite somewhere on the spectrum.
pub fn apply_spectral_fn<F: Fn(f64) -> f64>(m: &SymMatrix, f: F) -> Result<SymMatrix> {
    let dec = sym_eigen(m);
    let mut g = Vec::with_capacity(dec.eigenvalues.len());
    for &d in &dec.eigenvalues {
        let v = f(d);
        if !v.is_finite() {
            return Err(Error::NonFinite { eigenvalue: d });
        }
        g.push(v);
    }
    Ok(dec.compose(&g))
}

/// Principal square root of a PSD matrix.
pub fn sym_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let dec = sym_eigen(m);
    let d = dec.clipped_psd_eigenvalues()?;
    let g: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    Ok(dec.compose(&g))
}

/// `sinh(t sqrt(lambda)) / sqrt(lambda)`, continued by its series at 0.
pub fn sinhc(lambda: f64, t: f64) -> f64 {
    if lambda < EIG_CUT {
        let t2 = t * t;
        t * (1.0 + lambda * t2 / 6.0 + lambda * lambda * t2 * t2 / 120.0)
    } else {
        let r = lambda.sqrt();
        (t * r).sinh() / r
    }
}

/// `m^{-1/2} sinh(t m^{1/2})`, equal to `sum_k m^k t^{2k+1} / (2k+1)!` on
/// singular `m`.
pub fn sinhc_sqrt(m: &SymMatrix, t: f64) -> Result<SymMatrix> {
    let dec = sym_eigen(m);
    let d = dec.clipped_psd_eigenvalues()?;
    let g: Vec<f64> = d.iter().map(|&v| sinhc(v, t)).collect();
    Ok(dec.compose(&g))
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky(m: &SymMatrix) -> Result<Matrix> {
    let min = min_eigenvalue(m);
    if !(min > PSD_TOL) {
        return Err(Error::NotSpd {
            min_eigenvalue: min,
        });
    }
    cholesky_unchecked(m.as_matrix()).ok_or(Error::NotSpd {
        min_eigenvalue: min,
    })
}

/// Cholesky without the spectral pre-check; `None` on a non-positive pivot.
pub(crate) fn cholesky_unchecked(m: &Matrix) -> Option<Matrix> {
    let n = m.dim();
    let mut l = Matrix::zeros(n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

pub fn min_eigenvalue(m: &SymMatrix) -> f64 {
    sym_eigen(m).min_eigenvalue()
}

/// Operator 2-norm of a general square matrix.
pub fn spectral_norm(m: &Matrix) -> f64 {
    let gram = SymMatrix::symmetrized(&(&m.transpose() * m));
    sym_eigen(&gram).max_eigenvalue().max(0.0).sqrt()
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(m: &Matrix) -> Self {
        let n = m.dim();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                if lu[(i, k)].abs() > best {
                    best = lu[(i, k)].abs();
                    piv = i;
                }
            }
            if piv != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            if pivot == 0.0 {
                continue;
            }
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    lu[(i, j)] -= f * lu[(k, j)];
                }
            }
        }
        Self { lu, perm, sign }
    }

    pub fn det(&self) -> f64 {
        (0..self.lu.dim()).fold(self.sign, |d, i| d * self.lu[(i, i)])
    }

    /// `(sign, log|det|)`; sign is 0 for an exactly singular matrix.
    pub fn log_abs_det(&self) -> (f64, f64) {
        let mut sign = self.sign;
        let mut log = 0.0;
        for i in 0..self.lu.dim() {
            let u = self.lu[(i, i)];
            if u == 0.0 {
                return (0.0, f64::NEG_INFINITY);
            }
            sign *= u.signum();
            log += u.abs().ln();
        }
        (sign, log)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.dim();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.lu[(i, k)] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.lu[(i, k)] * x[k];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.lu.dim();
        let mut inv = Matrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Determinant and inverse of a general square matrix via LU.
pub fn general_det_and_inverse(m: &Matrix) -> Result<(f64, Matrix)> {
    let lu = Lu::new(m);
    let det = lu.det();
    if !(det.abs() > SINGULAR_DET) {
        return Err(Error::Singular { det });
    }
    Ok((det, lu.inverse()))
}
