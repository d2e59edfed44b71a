//! Long-time Laplace exponent `Lambda`, its Legendre transform and the
//! regime constants of the basket smile.
//!
//! `Lambda(theta) = T (r theta^T 1 - alpha/2 tr(b + phi(theta)^{1/2}))` on the
//! closed domain `U = { phi(theta) PSD }` and `+inf` outside.

use crate::error::{Error, Result};
use crate::matfun::{cholesky_unchecked, sym_eigen, Lu, Matrix, SpectralDecomp};
use crate::model::{ModelParams, DOMAIN_TOL};
use crate::optimize::{
    barrier_minimize, BarrierConstraint, BarrierSettings, BoxBounds, ConvexObjective,
};

/// Starts of the multi-start Legendre solver must agree this closely.
const START_AGREEMENT: f64 = 1e-7;

/// A value in `R ∪ {+inf}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInfinity,
}

impl ExtendedReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::PosInfinity => None,
        }
    }

    /// Lossy conversion for output: `+inf` becomes `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaEval {
    pub value: ExtendedReal,
    pub theta: Vec<f64>,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEval {
    pub y: Vec<f64>,
    pub value: f64,
    pub argmax_lambda: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeConstants {
    pub x_star: Vec<f64>,
    pub x_tilde_star: Vec<f64>,
    pub beta_star: f64,
    pub beta_hat_star: f64,
    pub beta_tilde_star: f64,
}

/// `Lambda` for a fixed horizon `T` and rate `r`.
#[derive(Debug, Clone, Copy)]
pub struct LaplaceExponent<'a> {
    pub params: &'a ModelParams,
    pub horizon: f64,
    pub rate: f64,
}

/// Eigendecomposition of `phi(theta)` with the derivative blocks rotated
/// into its eigenbasis.
struct PhiSpectrum {
    dec: SpectralDecomp,
    /// `P^T (d phi / d theta_j) P`.
    dphi_hat: Vec<Matrix>,
}

impl PhiSpectrum {
    fn interior(params: &ModelParams, theta: &[f64]) -> Result<Self> {
        let dec = sym_eigen(&params.phi(theta));
        let min = dec.min_eigenvalue();
        if min < -DOMAIN_TOL {
            return Err(Error::OutOfDomain { min_eig_phi: min });
        }
        if min <= DOMAIN_TOL {
            return Err(Error::OnBoundary { min_eig_phi: min });
        }
        let p = &dec.eigenvectors;
        let pt = p.transpose();
        let dphi_hat = (0..params.n)
            .map(|j| &(&pt * params.dphi(theta, j).as_matrix()) * p)
            .collect();
        Ok(Self { dec, dphi_hat })
    }

    fn rotate(&self, m: &Matrix) -> Matrix {
        let p = &self.dec.eigenvectors;
        &(&p.transpose() * m) * p
    }
}

/// Divided difference of `x -> x^{-1/2}`, also valid on the diagonal.
fn inv_sqrt_divided_difference(a: f64, b: f64) -> f64 {
    let (sa, sb) = (a.sqrt(), b.sqrt());
    -1.0 / (sa * sb * (sa + sb))
}

impl<'a> LaplaceExponent<'a> {
    pub fn new(params: &'a ModelParams, horizon: f64) -> Self {
        Self {
            params,
            horizon,
            rate: params.r,
        }
    }

    /// `T = 1`, `r = 0`, the normalization used for the smile asymptotics.
    pub fn smile(params: &'a ModelParams) -> Self {
        Self {
            params,
            horizon: 1.0,
            rate: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.n
    }

    pub fn value(&self, theta: &[f64]) -> ExtendedReal {
        let dec = sym_eigen(&self.params.phi(theta));
        if dec.min_eigenvalue() < -DOMAIN_TOL {
            return ExtendedReal::PosInfinity;
        }
        let tr_sqrt: f64 = dec.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
        let sum: f64 = theta.iter().sum();
        let p = self.params;
        ExtendedReal::Finite(
            self.horizon * (self.rate * sum - 0.5 * p.alpha * (p.b.trace() + tr_sqrt)),
        )
    }

    pub fn eval(&self, theta: &[f64]) -> LambdaEval {
        LambdaEval {
            value: self.value(theta),
            theta: theta.to_vec(),
            horizon: self.horizon,
        }
    }

    /// `Lambda(base + s * direction)`.
    pub fn line(&self, base: &[f64], direction: &[f64], s: f64) -> ExtendedReal {
        let theta: Vec<f64> = base.iter().zip(direction).map(|(b, d)| b + s * d).collect();
        self.value(&theta)
    }

    /// Gradient on the interior of `U`; `OnBoundary` where `phi` is
    /// (numerically) singular, since the gradient blows up there.
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let spec = PhiSpectrum::interior(self.params, theta)?;
        Ok(self.gradient_from(&spec))
    }

    fn gradient_from(&self, spec: &PhiSpectrum) -> Vec<f64> {
        let alpha = self.params.alpha;
        let eig = &spec.dec.eigenvalues;
        spec.dphi_hat
            .iter()
            .map(|e| {
                let tr: f64 = (0..eig.len()).map(|i| e[(i, i)] / eig[i].sqrt()).sum();
                self.horizon * (self.rate - 0.25 * alpha * tr)
            })
            .collect()
    }

    pub fn hessian(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let spec = PhiSpectrum::interior(self.params, theta)?;
        Ok(self.hessian_from(&spec))
    }

    fn hessian_from(&self, spec: &PhiSpectrum) -> Vec<Vec<f64>> {
        let n = self.params.n;
        let eig = &spec.dec.eigenvalues;
        let scale = -0.25 * self.params.alpha * self.horizon;
        let mut h = vec![vec![0.0; n]; n];
        for k in 0..n {
            for j in k..n {
                let (ek, ej) = (&spec.dphi_hat[k], &spec.dphi_hat[j]);
                let mut first = 0.0;
                for i in 0..n {
                    for l in 0..n {
                        first += inv_sqrt_divided_difference(eig[i], eig[l])
                            * ek[(i, l)]
                            * ej[(l, i)];
                    }
                }
                let second_hat = spec.rotate(self.params.d2phi(k, j).as_matrix());
                let second: f64 = (0..n).map(|i| second_hat[(i, i)] / eig[i].sqrt()).sum();
                h[k][j] = scale * (first + second);
                h[j][k] = h[k][j];
            }
        }
        h
    }

    /// `Lambda*(y) = sup_lambda <lambda, y> - Lambda(lambda)` over `U`
    /// intersected with `bounds`.
    ///
    /// The concave maximization is run from the origin and from `±R/2 e_i`
    /// (shrunk into the feasible set). `converged` is false when any start
    /// fails its stopping test or the starts disagree; the best value found
    /// is returned either way.
    pub fn rate(&self, y: &[f64], bounds: Option<&BoxBounds>) -> Result<RateEval> {
        let n = self.dim();
        if y.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: y.len(),
            });
        }
        let unbounded = BoxBounds::unbounded(n);
        let bounds = bounds.unwrap_or(&unbounded);
        let objective = LegendreObjective { lam: *self, y };
        let barrier = DomainBarrier {
            params: self.params,
        };
        let settings = BarrierSettings::default();

        let mut results = Vec::new();
        let mut last_err = None;
        for start in self.starts(bounds) {
            match barrier_minimize(&objective, &barrier, bounds, &start, &settings) {
                Ok(m) => results.push(m),
                Err(e) => last_err = Some(e),
            }
        }
        let Some(best) = results
            .iter()
            .min_by(|a, b| a.value.total_cmp(&b.value))
            .cloned()
        else {
            return Err(last_err.unwrap_or_else(|| {
                Error::NotConverged("no feasible start for the Legendre transform".into())
            }));
        };
        let tol = START_AGREEMENT * best.value.abs().max(1.0);
        let agree = results.iter().all(|m| (m.value - best.value).abs() <= tol);
        let converged = agree && results.iter().any(|m| m.converged) && last_err.is_none();
        Ok(RateEval {
            y: y.to_vec(),
            value: -best.value,
            argmax_lambda: best.x,
            converged,
        })
    }

    /// Strictly feasible starting points for the Legendre solver.
    fn starts(&self, bounds: &BoxBounds) -> Vec<Vec<f64>> {
        let n = self.dim();
        let half_radius = 0.5 * self.params.domain_bounding_radius();
        let anchor = interior_anchor(self.params, bounds);
        let mut raw = vec![vec![0.0; n]];
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut s = vec![0.0; n];
                s[i] = sign * half_radius;
                raw.push(s);
            }
        }
        raw.into_iter()
            .filter_map(|s| shrink_into(self.params, bounds, &anchor, &clamp_into(bounds, &s)))
            .collect()
    }
}

/// Margin kept from the box faces by starting points.
const BOX_MARGIN: f64 = 1e-3;

fn clamp_into(bounds: &BoxBounds, x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut v = v;
            if let Some(u) = bounds.upper.get(i).copied().flatten() {
                v = v.min(u - BOX_MARGIN);
            }
            if let Some(l) = bounds.lower.get(i).copied().flatten() {
                v = v.max(l + BOX_MARGIN);
            }
            v
        })
        .collect()
}

/// A point of the box near the origin, pulled towards the origin until it
/// lies strictly inside `U` (`phi(0) = b^2` is positive definite).
fn interior_anchor(params: &ModelParams, bounds: &BoxBounds) -> Vec<f64> {
    let mut x = clamp_into(bounds, &vec![0.0; params.n]);
    for _ in 0..60 {
        if strictly_feasible(params, bounds, &x) {
            break;
        }
        for v in x.iter_mut() {
            *v *= 0.5;
        }
    }
    x
}

fn strictly_feasible(params: &ModelParams, bounds: &BoxBounds, x: &[f64]) -> bool {
    bounds.strictly_inside(x) && params.in_domain(x).min_eig_phi > 1e-8
}

/// Moves `x` towards `anchor` until it is strictly feasible.
pub(crate) fn shrink_into(
    params: &ModelParams,
    bounds: &BoxBounds,
    anchor: &[f64],
    x: &[f64],
) -> Option<Vec<f64>> {
    let mut t = 1.0;
    for _ in 0..60 {
        let p: Vec<f64> = anchor.iter().zip(x).map(|(a, v)| a + t * (v - a)).collect();
        if strictly_feasible(params, bounds, &p) {
            return Some(p);
        }
        t *= 0.5;
    }
    strictly_feasible(params, bounds, anchor).then(|| anchor.to_vec())
}

/// `lambda -> Lambda(lambda) - <lambda, y>`.
struct LegendreObjective<'a> {
    lam: LaplaceExponent<'a>,
    y: &'a [f64],
}

impl ConvexObjective for LegendreObjective<'_> {
    fn dim(&self) -> usize {
        self.lam.dim()
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        let dot: f64 = x.iter().zip(self.y).map(|(a, b)| a * b).sum();
        self.lam.value(x).finite().map(|v| v - dot)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let g = self.lam.gradient(x).ok()?;
        Some(g.iter().zip(self.y).map(|(a, b)| a - b).collect())
    }

    fn hessian(&self, x: &[f64]) -> Option<Vec<Vec<f64>>> {
        self.lam.hessian(x).ok()
    }
}

/// `log det phi(theta)`, a concave function whose superlevel sets exhaust
/// the interior of `U`.
pub struct DomainBarrier<'a> {
    pub params: &'a ModelParams,
}

impl BarrierConstraint for DomainBarrier<'_> {
    fn log_barrier(&self, x: &[f64]) -> Option<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let p = self.params;
        let n = p.n;
        let phi = p.phi(x);
        let l = cholesky_unchecked(phi.as_matrix())?;
        let log_det: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
        let inv = Lu::new(phi.as_matrix()).inverse();
        let dphi: Vec<Matrix> = (0..n).map(|j| p.dphi(x, j).into_matrix()).collect();
        let inv_d: Vec<Matrix> = dphi.iter().map(|d| &inv * d).collect();
        let grad: Vec<f64> = inv_d.iter().map(Matrix::trace).collect();
        let mut hess = vec![vec![0.0; n]; n];
        for k in 0..n {
            for j in k..n {
                let v = -inv_d[k].trace_product(&inv_d[j])
                    + inv.trace_product(p.d2phi(k, j).as_matrix());
                hess[k][j] = v;
                hess[j][k] = v;
            }
        }
        Some((log_det, grad, hess))
    }
}

/// `Lambda(theta)` for horizon `T` and the model's `r`.
pub fn lambda(params: &ModelParams, horizon: f64, theta: &[f64]) -> LambdaEval {
    LaplaceExponent::new(params, horizon).eval(theta)
}

pub fn grad_lambda(params: &ModelParams, horizon: f64, theta: &[f64]) -> Result<Vec<f64>> {
    LaplaceExponent::new(params, horizon).gradient(theta)
}

/// `Lambda*(y)` for the unit-horizon exponent (with the model's `r`).
pub fn rate_function(
    params: &ModelParams,
    y: &[f64],
    bounds: Option<&BoxBounds>,
) -> Result<RateEval> {
    LaplaceExponent::new(params, 1.0).rate(y, bounds)
}

/// `Lambda(base + s direction)` in the smile normalization.
pub fn lambda_line(params: &ModelParams, base: &[f64], direction: &[f64], s: f64) -> ExtendedReal {
    LaplaceExponent::smile(params).line(base, direction, s)
}

/// `x* = grad Lambda(0)`, `x~*_j = d_j Lambda(e_j)` and the derived
/// thresholds, all in the smile normalization.
pub fn regime_constants(params: &ModelParams) -> Result<RegimeConstants> {
    let lam = LaplaceExponent::smile(params);
    let n = params.n;
    let x_star = lam.gradient(&vec![0.0; n])?;
    let x_tilde_star = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            lam.gradient(&e).map(|g| g[j])
        })
        .collect::<Result<Vec<f64>>>()?;
    let fold = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| v.iter().copied().fold(init, f);
    Ok(RegimeConstants {
        beta_star: fold(&x_star, f64::max, f64::NEG_INFINITY),
        beta_hat_star: fold(&x_tilde_star, f64::min, f64::INFINITY),
        beta_tilde_star: fold(&x_tilde_star, f64::max, f64::NEG_INFINITY),
        x_star,
        x_tilde_star,
    })
}
