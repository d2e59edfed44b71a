//! Closed-form finite-horizon Laplace transforms of the model.
//!
//! Both transforms are driven by the matrix function
//! `V(t) = cosh(t s) + s^{-1} sinh(t s) w`, where `s` is the square root of a
//! PSD matrix. For the log-price transform `s = phi(theta)^{1/2}` and
//! `w = -b`. `log_laplace_y` evaluates it in the eigenbasis of `phi` after
//! factoring out `exp(t s)`, so nothing overflows even for horizons of
//! several hundred years: with `phi = P D P^T`, `d = sqrt(D)`,
//!
//! ```text
//! V = P e^{t d} M P^T,   M = diag((1 + e^{-2td})/2) + diag((1 - e^{-2td})/(2d)) P^T w P
//! V' V^{-1} = s + e^{-ts} (w - s) V^{-1}
//! ```
//!
//! `v_pair` and `wishart_joint_laplace` use the direct (unscaled) formulas and
//! serve as an independent route at moderate horizons.

use crate::error::{Error, Result};
use crate::matfun::{self, sinhc_sqrt, sym_eigen, Lu, Matrix, SymMatrix, PSD_TOL};
use crate::model::{ModelParams, DOMAIN_TOL};

const GAMMA_ASYMMETRY_TOL: f64 = 1e-8;

/// `log E[exp(theta^T Y_t)]` together with its finiteness flag.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceEval {
    pub log_value: f64,
    pub finite: bool,
    pub t: f64,
    pub theta: Vec<f64>,
}

impl LaplaceEval {
    pub fn value(&self) -> Option<f64> {
        self.finite.then_some(self.log_value)
    }
}

/// `V(t)`, `V'(t)` and `det V(t)` for the log-price transform.
#[derive(Debug, Clone, PartialEq)]
pub struct VPair {
    pub v: Matrix,
    pub v_prime: Matrix,
    pub det_v: f64,
}

/// Output of the rescaled Riccati solution.
struct Scaled {
    log_det_v: f64,
    det_sign: f64,
    /// `V'(t) V(t)^{-1}` before symmetrization.
    vprime_vinv: Matrix,
}

/// Solves for `log det V(t)` and `V'(t) V^{-1}(t)` with
/// `V = cosh(t s) + s^{-1} sinh(t s) w`, `s = vt^{1/2}`.
fn scaled_riccati(vt: &SymMatrix, wt: &Matrix, t: f64) -> Result<Scaled> {
    let n = vt.dim();
    let dec = sym_eigen(vt);
    let d: Vec<f64> = dec.clipped_psd_eigenvalues()?.iter().map(|v| v.sqrt()).collect();
    let p = &dec.eigenvectors;
    let w_hat = &(&p.transpose() * wt) * p;

    let decay: Vec<f64> = d.iter().map(|&di| (-t * di).exp()).collect();
    let mut m = Matrix::zeros(n);
    for i in 0..n {
        let e2 = (-2.0 * t * d[i]).exp();
        let c = 0.5 * (1.0 + e2);
        let s = if d[i] == 0.0 {
            t
        } else {
            -(-2.0 * t * d[i]).exp_m1() / (2.0 * d[i])
        };
        for j in 0..n {
            m[(i, j)] = s * w_hat[(i, j)];
        }
        m[(i, i)] += c;
    }
    let lu = Lu::new(&m);
    let (det_sign, log_abs_det_m) = lu.log_abs_det();
    if det_sign <= 0.0 {
        return Ok(Scaled {
            log_det_v: f64::NAN,
            det_sign,
            vprime_vinv: Matrix::zeros(n),
        });
    }
    let m_inv = lu.inverse();

    // E^- (w_hat - D) M^{-1} E^-  +  D, all in the eigenbasis
    let mut wd = w_hat.clone();
    for i in 0..n {
        wd[(i, i)] -= d[i];
    }
    let mut core = &wd * &m_inv;
    for i in 0..n {
        for j in 0..n {
            core[(i, j)] *= decay[i] * decay[j];
        }
        core[(i, i)] += d[i];
    }
    let g = &(p * &core) * &p.transpose();
    Ok(Scaled {
        log_det_v: t * d.iter().sum::<f64>() + log_abs_det_m,
        det_sign,
        vprime_vinv: g,
    })
}

fn affine_part(params: &ModelParams, theta: &[f64], t: f64) -> f64 {
    let dot_y0: f64 = theta.iter().zip(&params.y0).map(|(a, b)| a * b).sum();
    let sum_theta: f64 = theta.iter().sum();
    dot_y0 + params.r * sum_theta * t
}

/// `log E[exp(theta^T Y_t)]`. Infinite (with `finite = false`) when `theta`
/// lies outside `U` or `det V(t)` is not positive.
pub fn log_laplace_y(params: &ModelParams, theta: &[f64], t: f64) -> LaplaceEval {
    let infinite = || LaplaceEval {
        log_value: f64::INFINITY,
        finite: false,
        t,
        theta: theta.to_vec(),
    };
    let phi = params.phi(theta);
    if matfun::min_eigenvalue(&phi) < -DOMAIN_TOL {
        return infinite();
    }
    if t == 0.0 {
        return LaplaceEval {
            log_value: affine_part(params, theta, 0.0),
            finite: true,
            t,
            theta: theta.to_vec(),
        };
    }
    let minus_b = params.b.scale(-1.0);
    let Ok(sc) = scaled_riccati(&clip_phi(&phi), minus_b.as_matrix(), t) else {
        return infinite();
    };
    if sc.det_sign <= 0.0 || !sc.log_det_v.is_finite() {
        return infinite();
    }
    let alpha = params.alpha;
    let gamma_trace = -0.5 * (&sc.vprime_vinv + params.b.as_matrix()).trace_product(&params.x0);
    let log_value = affine_part(params, theta, t)
        - 0.5 * alpha * params.b.trace() * t
        - 0.5 * alpha * sc.log_det_v
        + gamma_trace;
    if !log_value.is_finite() {
        return infinite();
    }
    LaplaceEval {
        log_value,
        finite: true,
        t,
        theta: theta.to_vec(),
    }
}

/// `phi` with eigenvalues in `[-DOMAIN_TOL, 0)` lifted to zero.
fn clip_phi(phi: &SymMatrix) -> SymMatrix {
    let dec = sym_eigen(phi);
    if dec.min_eigenvalue() >= 0.0 {
        return phi.clone();
    }
    dec.map(|v| v.max(0.0))
}

fn require_domain(params: &ModelParams, theta: &[f64]) -> Result<SymMatrix> {
    let phi = params.phi(theta);
    let min = matfun::min_eigenvalue(&phi);
    if min < -DOMAIN_TOL {
        return Err(Error::OutOfDomain { min_eig_phi: min });
    }
    Ok(clip_phi(&phi))
}

/// `V(t)`, `V'(t)` and `det V(t)` from the unscaled hyperbolic formulas.
pub fn v_pair(params: &ModelParams, theta: &[f64], t: f64) -> Result<VPair> {
    let phi = require_domain(params, theta)?;
    let dec = sym_eigen(&phi);
    let d = dec.clipped_psd_eigenvalues()?;
    let cosh = {
        let g: Vec<f64> = d.iter().map(|v| (t * v.sqrt()).cosh()).collect();
        dec.compose(&g)
    };
    let sinh_root = {
        let g: Vec<f64> = d.iter().map(|v| (t * v.sqrt()).sinh() * v.sqrt()).collect();
        dec.compose(&g)
    };
    let sinhc = sinhc_sqrt(&phi, t)?;
    let b = params.b.as_matrix();
    let v = cosh.as_matrix() - &(sinhc.as_matrix() * b);
    let v_prime = sinh_root.as_matrix() - &(cosh.as_matrix() * b);
    let det_v = Lu::new(&v).det();
    Ok(VPair { v, v_prime, det_v })
}

/// `log E[exp(-tr(w X_t)/2 - tr(v R_t)/2)]` with `R_t = int_0^t X_s ds`.
///
/// Requires `v + b^2` and `w - b` to be PSD (the sufficient condition with
/// `m = -b/2`). Uses `V = sinhc(v~, t) w~ + cosh(t v~^{1/2})`, which stays
/// valid when `v~ = v + b^2` is singular.
pub fn wishart_joint_laplace(
    params: &ModelParams,
    v: &SymMatrix,
    w: &SymMatrix,
    t: f64,
) -> Result<f64> {
    let v_tilde = v.add(&params.b_squared());
    let w_tilde = w.sub(&params.b);
    let min_v = matfun::min_eigenvalue(&v_tilde);
    if min_v < -PSD_TOL {
        return Err(Error::ConditionFailed(format!(
            "v + b^2 has min eigenvalue {min_v:e}"
        )));
    }
    let min_w = matfun::min_eigenvalue(&w_tilde);
    if min_w < -PSD_TOL {
        return Err(Error::ConditionFailed(format!(
            "w - b has min eigenvalue {min_w:e}"
        )));
    }
    let dec = sym_eigen(&v_tilde);
    let d = dec.clipped_psd_eigenvalues()?;
    let cosh = dec.compose(&d.iter().map(|x| (t * x.sqrt()).cosh()).collect::<Vec<_>>());
    let sinh_root =
        dec.compose(&d.iter().map(|x| (t * x.sqrt()).sinh() * x.sqrt()).collect::<Vec<_>>());
    let sinhc = sinhc_sqrt(&v_tilde, t)?;

    let big_v = &(sinhc.as_matrix() * w_tilde.as_matrix()) + cosh.as_matrix();
    let big_v_prime = &(cosh.as_matrix() * w_tilde.as_matrix()) + sinh_root.as_matrix();
    let (det, inv) = matfun::general_det_and_inverse(&big_v)?;
    if det <= 0.0 {
        return Err(Error::Singular { det });
    }
    let alpha = params.alpha;
    let drift = &(&big_v_prime * &inv) + params.b.as_matrix();
    Ok(-0.5 * alpha * params.b.trace() * t
        - 0.5 * alpha * det.ln()
        - 0.5 * drift.trace_product(&params.x0))
}

/// `gamma_theta(tau) = -(V'(tau) V(tau)^{-1} + b) / 2`, the coefficient of
/// `X` in `log E[exp(theta^T Y_T) | F_{T - tau}]`.
pub fn gamma_theta(params: &ModelParams, theta: &[f64], tau: f64) -> Result<SymMatrix> {
    let phi = require_domain(params, theta)?;
    let n = params.n;
    if tau == 0.0 {
        return Ok(SymMatrix::zeros(n));
    }
    let minus_b = params.b.scale(-1.0);
    let sc = scaled_riccati(&phi, minus_b.as_matrix(), tau)?;
    if sc.det_sign <= 0.0 {
        return Err(Error::Singular { det: 0.0 });
    }
    let g = (&sc.vprime_vinv + params.b.as_matrix()).scale(-0.5);
    let asym = g.asymmetry();
    debug_assert!(
        asym <= GAMMA_ASYMMETRY_TOL * g.max_abs().max(1.0),
        "gamma asymmetry {asym:e}"
    );
    Ok(SymMatrix::symmetrized(&g))
}
