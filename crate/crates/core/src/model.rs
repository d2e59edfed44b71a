//! Model parameters, validation, and the quadratic map `phi` whose PSD
//! sublevel set is the domain `U` of the Laplace exponent.
//!
//! The log-prices follow `dY = (r 1 - diag(a^T X a)/2) dt + a^T X^{1/2} dZ`
//! and the volatility matrix is the Wishart process
//! `dX = (alpha I + b X + X b) dt + X^{1/2} dW + dW^T X^{1/2}`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matfun::{self, general_det_and_inverse, spectral_norm, Matrix, SymMatrix};

/// Boundary tolerance on `min eig phi(theta)`.
pub const DOMAIN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n: usize,
    pub alpha: f64,
    pub a: Matrix,
    pub b: SymMatrix,
    pub x0: SymMatrix,
    pub r: f64,
    pub y0: Vec<f64>,
    pub omega: Option<Vec<f64>>,
}

/// A violated parameter constraint, carrying the offending value.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension { field: &'static str, expected: usize, got: usize },
    AlphaTooSmall { alpha: f64, n: usize },
    MinusBNotSpd { min_eigenvalue: f64 },
    X0NotSpd { min_eigenvalue: f64 },
    ANotInvertible { det: f64 },
    OmegaNegative { index: usize, value: f64 },
    OmegaSum { sum: f64 },
    NonFinite { field: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension { field, expected, got } => {
                write!(f, "{field} has dimension {got}, expected {expected}")
            }
            Violation::AlphaTooSmall { alpha, n } => {
                write!(f, "alpha ≤ n−1 (alpha = {alpha}, n = {n})")
            }
            Violation::MinusBNotSpd { min_eigenvalue } => {
                write!(f, "−b not SPD (min eigenvalue of −b = {min_eigenvalue:e})")
            }
            Violation::X0NotSpd { min_eigenvalue } => {
                write!(f, "x0 not SPD (min eigenvalue = {min_eigenvalue:e})")
            }
            Violation::ANotInvertible { det } => {
                write!(f, "a not invertible (det = {det:e})")
            }
            Violation::OmegaNegative { index, value } => {
                write!(f, "omega[{index}] = {value} is negative")
            }
            Violation::OmegaSum { sum } => write!(f, "omega sums to {sum}, expected 1"),
            Violation::NonFinite { field } => write!(f, "{field} contains non-finite entries"),
        }
    }
}

/// Where `theta` sits relative to `U = { theta : phi(theta) PSD }`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainReport {
    pub theta: Vec<f64>,
    pub min_eig_phi: f64,
    pub inside: bool,
    pub strict: bool,
}

impl ModelParams {
    /// Builds and validates a parameter set.
    pub fn new(
        alpha: f64,
        a: Matrix,
        b: SymMatrix,
        x0: SymMatrix,
        r: f64,
        y0: Vec<f64>,
        omega: Option<Vec<f64>>,
    ) -> Result<Self> {
        let p = Self {
            n: a.dim(),
            alpha,
            a,
            b,
            x0,
            r,
            y0,
            omega,
        };
        p.ensure_valid()?;
        Ok(p)
    }

    /// Two-asset set used for the long-maturity smile experiments:
    /// `alpha = 1.5`, `a = diag(0.2, 0.3)`, `b = -[[1, 0.7], [0.7, 0.7]]`,
    /// `x = I`, `S_0 = 1`, `r = 0`, equal weights.
    pub fn smile_example() -> Self {
        Self::new(
            1.5,
            Matrix::from_diag(&[0.2, 0.3]),
            SymMatrix::from_rows(&[[-1.0, -0.7], [-0.7, -0.7]]).unwrap(),
            SymMatrix::identity(2),
            0.0,
            vec![0.0, 0.0],
            Some(vec![0.5, 0.5]),
        )
        .expect("smile example parameters are valid")
    }

    /// Two-asset set used for the importance-sampling table:
    /// `alpha = 4.5`, `a = diag(0.1, 0.12)`, `b = -[[0.7, 0.3], [0.3, 0.5]]`,
    /// `x = I`, `S_0 = 1`, `r = 0`, equal weights.
    pub fn basket_put_example() -> Self {
        Self::new(
            4.5,
            Matrix::from_diag(&[0.1, 0.12]),
            SymMatrix::from_rows(&[[-0.7, -0.3], [-0.3, -0.5]]).unwrap(),
            SymMatrix::identity(2),
            0.0,
            vec![0.0, 0.0],
            Some(vec![0.5, 0.5]),
        )
        .expect("basket put example parameters are valid")
    }

    /// Every violated constraint; an empty list means the parameters are usable.
    pub fn validate(&self) -> Vec<Violation> {
        let n = self.n;
        let mut out = Vec::new();
        for (field, got) in [
            ("a", self.a.dim()),
            ("b", self.b.dim()),
            ("x0", self.x0.dim()),
            ("y0", self.y0.len()),
        ] {
            if got != n {
                out.push(Violation::Dimension { field, expected: n, got });
            }
        }
        if let Some(w) = &self.omega {
            if w.len() != n {
                out.push(Violation::Dimension {
                    field: "omega",
                    expected: n,
                    got: w.len(),
                });
            }
        }
        if !out.is_empty() {
            return out;
        }
        let finite = [
            ("alpha", self.alpha.is_finite()),
            ("a", self.a.is_finite()),
            ("b", self.b.is_finite()),
            ("x0", self.x0.is_finite()),
            ("r", self.r.is_finite()),
            ("y0", self.y0.iter().all(|v| v.is_finite())),
        ];
        for (field, ok) in finite {
            if !ok {
                out.push(Violation::NonFinite { field });
            }
        }
        if !out.is_empty() {
            return out;
        }

        if !(self.alpha > n as f64 - 1.0) {
            out.push(Violation::AlphaTooSmall { alpha: self.alpha, n });
        }
        let min_minus_b = matfun::min_eigenvalue(&self.b.scale(-1.0));
        if !(min_minus_b > 0.0) {
            out.push(Violation::MinusBNotSpd {
                min_eigenvalue: min_minus_b,
            });
        }
        let min_x0 = matfun::min_eigenvalue(&self.x0);
        if !(min_x0 > 0.0) {
            out.push(Violation::X0NotSpd {
                min_eigenvalue: min_x0,
            });
        }
        // a invertible <=> a^T a SPD
        let det_a = matfun::Lu::new(&self.a).det();
        let ata = SymMatrix::symmetrized(&(&self.a.transpose() * &self.a));
        if !(det_a.abs() > 1e-300) || !(matfun::min_eigenvalue(&ata) > 0.0) {
            out.push(Violation::ANotInvertible { det: det_a });
        }
        if let Some(w) = &self.omega {
            for (index, &value) in w.iter().enumerate() {
                if !(value >= 0.0) {
                    out.push(Violation::OmegaNegative { index, value });
                }
            }
            let sum: f64 = w.iter().sum();
            if !((sum - 1.0).abs() <= 1e-12) {
                out.push(Violation::OmegaSum { sum });
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            Err(Error::InvalidModel(msg.join("; ")))
        }
    }

    /// Basket weights, defaulting to equal weights.
    pub fn weights(&self) -> Vec<f64> {
        self.omega
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.n as f64; self.n])
    }

    pub fn b_squared(&self) -> SymMatrix {
        SymMatrix::symmetrized(&(self.b.as_matrix() * self.b.as_matrix()))
    }

    /// `a M a^T` for a symmetric `M`.
    fn sandwich(&self, m: &Matrix) -> SymMatrix {
        SymMatrix::symmetrized(&(&(&self.a * m) * &self.a.transpose()))
    }

    /// `a (Diag(theta) - theta theta^T) a^T`, the quadratic part of `phi`.
    pub fn phi_quadratic_part(&self, theta: &[f64]) -> SymMatrix {
        let inner = &Matrix::from_diag(theta) - &Matrix::outer(theta, theta);
        self.sandwich(&inner)
    }

    /// `phi(theta) = b^2 + a (Diag(theta) - theta theta^T) a^T`.
    pub fn phi(&self, theta: &[f64]) -> SymMatrix {
        self.b_squared().add(&self.phi_quadratic_part(theta))
    }

    /// `d phi / d theta_j = a (e_j e_j^T - theta e_j^T - e_j theta^T) a^T`.
    pub fn dphi(&self, theta: &[f64], j: usize) -> SymMatrix {
        let n = self.n;
        let mut inner = Matrix::zeros(n);
        inner[(j, j)] = 1.0;
        for i in 0..n {
            inner[(i, j)] -= theta[i];
            inner[(j, i)] -= theta[i];
        }
        self.sandwich(&inner)
    }

    /// `d^2 phi / d theta_k d theta_j = -a (e_k e_j^T + e_j e_k^T) a^T`.
    pub fn d2phi(&self, k: usize, j: usize) -> SymMatrix {
        let mut inner = Matrix::zeros(self.n);
        inner[(k, j)] -= 1.0;
        inner[(j, k)] -= 1.0;
        self.sandwich(&inner)
    }

    pub fn in_domain(&self, theta: &[f64]) -> DomainReport {
        let min_eig_phi = matfun::min_eigenvalue(&self.phi(theta));
        DomainReport {
            theta: theta.to_vec(),
            min_eig_phi,
            inside: min_eig_phi >= -DOMAIN_TOL,
            strict: min_eig_phi > DOMAIN_TOL,
        }
    }

    /// Radius `max{2, sqrt(2) ||b (a^T)^{-1}||_2}` of a ball containing `U`.
    pub fn domain_bounding_radius(&self) -> f64 {
        let (_, inv_at) = general_det_and_inverse(&self.a.transpose())
            .expect("validated parameters have invertible a");
        let norm = spectral_norm(&(self.b.as_matrix() * &inv_at));
        2.0_f64.max(norm * 2.0_f64.sqrt())
    }
}

/// JSON layout of [`ModelParams`]: matrices as arrays of rows (a flat
/// row-major array is accepted too).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParamsFile {
    pub n: usize,
    pub alpha: f64,
    pub a: MatrixRepr,
    pub b: MatrixRepr,
    pub x0: MatrixRepr,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub omega: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixRepr {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixRepr {
    fn to_matrix(&self, n: usize) -> Result<Matrix> {
        match self {
            MatrixRepr::Rows(rows) => {
                if rows.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: rows.len(),
                    });
                }
                Matrix::from_rows(rows)
            }
            MatrixRepr::Flat(v) => Matrix::from_row_major(n, v.clone()),
        }
    }
}

impl TryFrom<ModelParamsFile> for ModelParams {
    type Error = Error;

    fn try_from(f: ModelParamsFile) -> Result<Self> {
        let a = f.a.to_matrix(f.n)?;
        let b = SymMatrix::new(f.b.to_matrix(f.n)?)?;
        let x0 = SymMatrix::new(f.x0.to_matrix(f.n)?)?;
        let y0 = f.y0.unwrap_or_else(|| vec![0.0; f.n]);
        let p = ModelParams {
            n: f.n,
            alpha: f.alpha,
            a,
            b,
            x0,
            r: f.r,
            y0,
            omega: f.omega,
        };
        p.ensure_valid()?;
        Ok(p)
    }
}

impl From<&ModelParams> for ModelParamsFile {
    fn from(p: &ModelParams) -> Self {
        Self {
            n: p.n,
            alpha: p.alpha,
            a: MatrixRepr::Rows(p.a.rows()),
            b: MatrixRepr::Rows(p.b.rows()),
            x0: MatrixRepr::Rows(p.x0.rows()),
            r: p.r,
            y0: Some(p.y0.clone()),
            omega: p.omega.clone(),
        }
    }
}

impl ModelParams {
    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelParamsFile =
            serde_json::from_str(s).map_err(|e| Error::InvalidModel(e.to_string()))?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelParamsFile::from(self)).expect("plain data serializes")
    }
}
