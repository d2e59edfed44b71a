//! Importance sampling of basket options under the tilted measures
//! `dP_theta/dP = exp(theta^T Y_T) / E[exp(theta^T Y_T)]`.
//!
//! The tilt is chosen by minimizing `H^(theta) + Lambda_T(theta)`, where `H^`
//! is the convex conjugate of the basket put log-payoff and `Lambda_T` the
//! long-time Laplace exponent at horizon `T`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::laplace::log_laplace_y;
use crate::ldp::{shrink_into, DomainBarrier, ExtendedReal, LaplaceExponent};
use crate::model::ModelParams;
use crate::optimize::{barrier_minimize, BarrierSettings, BoxBounds, ConvexObjective};
use crate::sim::{simulate, MeasureSpec, PathConfig};
use crate::stats::{batch_variances, summarize};

/// Upper bound imposed on each tilt coordinate.
pub const THETA_CAP: f64 = -1e-10;
const VR_BATCHES: usize = 10;
/// Offset between the seeds of the plain and tilted runs of a variance ratio.
const TILTED_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffKind {
    BasketPut,
    BasketCall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    pub strike: f64,
    pub weights: Vec<f64>,
}

impl PayoffSpec {
    pub fn new(kind: PayoffKind, strike: f64, weights: Vec<f64>) -> Result<Self> {
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(Error::InvalidArgument(format!("strike must be positive, got {strike}")));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "basket weights must be positive and sum to one, got {weights:?}"
            )));
        }
        Ok(Self {
            kind,
            strike,
            weights,
        })
    }

    pub fn basket_put(strike: f64, weights: Vec<f64>) -> Result<Self> {
        Self::new(PayoffKind::BasketPut, strike, weights)
    }

    /// Undiscounted payoff at terminal log-prices `y`.
    pub fn payoff(&self, y: &[f64]) -> f64 {
        let basket: f64 = self.weights.iter().zip(y).map(|(w, v)| w * v.exp()).sum();
        match self.kind {
            PayoffKind::BasketPut => (self.strike - basket).max(0.0),
            PayoffKind::BasketCall => (basket - self.strike).max(0.0),
        }
    }
}

/// Convex conjugate of the basket put log-payoff:
/// `-(1 - s) log((1 - s)/K) - sum_k theta_k log(-theta_k/omega_k)` with
/// `s = sum theta`, `+inf` unless every `theta_k < 0`.
pub fn h_hat_basket_put(theta: &[f64], strike: f64, omega: &[f64]) -> ExtendedReal {
    if theta.iter().any(|&t| !(t < 0.0)) {
        return ExtendedReal::PosInfinity;
    }
    let one_minus_s = 1.0 - theta.iter().sum::<f64>();
    let mut v = -one_minus_s * (one_minus_s / strike).ln();
    for (t, w) in theta.iter().zip(omega) {
        v -= t * (-t / w).ln();
    }
    ExtendedReal::Finite(v)
}

/// Gradient of [`h_hat_basket_put`] on the negative orthant.
pub fn h_hat_gradient(theta: &[f64], strike: f64, omega: &[f64]) -> Vec<f64> {
    let c = ((1.0 - theta.iter().sum::<f64>()) / strike).ln();
    theta.iter().zip(omega).map(|(t, w)| c - (-t / w).ln()).collect()
}

/// Hessian of [`h_hat_basket_put`] on the negative orthant.
pub fn h_hat_hessian(theta: &[f64]) -> Vec<Vec<f64>> {
    let n = theta.len();
    let c = -1.0 / (1.0 - theta.iter().sum::<f64>());
    (0..n)
        .map(|k| (0..n).map(|l| c - if k == l { 1.0 / theta[k] } else { 0.0 }).collect())
        .collect()
}

/// `theta -> H^(theta) + Lambda_T(theta)`.
pub struct TiltObjective<'a> {
    pub lam: LaplaceExponent<'a>,
    pub payoff: &'a PayoffSpec,
}

impl<'a> TiltObjective<'a> {
    pub fn new(params: &'a ModelParams, horizon: f64, payoff: &'a PayoffSpec) -> Self {
        Self {
            lam: LaplaceExponent::new(params, horizon),
            payoff,
        }
    }

    pub fn eval(&self, theta: &[f64]) -> ExtendedReal {
        match (
            h_hat_basket_put(theta, self.payoff.strike, &self.payoff.weights),
            self.lam.value(theta),
        ) {
            (ExtendedReal::Finite(h), ExtendedReal::Finite(l)) => ExtendedReal::Finite(h + l),
            _ => ExtendedReal::PosInfinity,
        }
    }
}

impl ConvexObjective for TiltObjective<'_> {
    fn dim(&self) -> usize {
        self.lam.dim()
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        self.eval(x).finite()
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        if x.iter().any(|&t| !(t < 0.0)) {
            return None;
        }
        let g = self.lam.gradient(x).ok()?;
        let h = h_hat_gradient(x, self.payoff.strike, &self.payoff.weights);
        Some(g.iter().zip(&h).map(|(a, b)| a + b).collect())
    }

    fn hessian(&self, x: &[f64]) -> Option<Vec<Vec<f64>>> {
        if x.iter().any(|&t| !(t < 0.0)) {
            return None;
        }
        let mut hl = self.lam.hessian(x).ok()?;
        let hh = h_hat_hessian(x);
        for (row, hrow) in hl.iter_mut().zip(&hh) {
            for (a, b) in row.iter_mut().zip(hrow) {
                *a += b;
            }
        }
        Some(hl)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaStar {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
}

/// Minimizer of `H^ + Lambda_T` over `U ∩ (-inf, 0)^n`.
pub fn theta_star(params: &ModelParams, horizon: f64, payoff: &PayoffSpec) -> Result<ThetaStar> {
    if payoff.kind != PayoffKind::BasketPut {
        return Err(Error::InvalidArgument(
            "the optimal tilt is only available for basket puts".into(),
        ));
    }
    let n = params.n;
    if payoff.weights.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: payoff.weights.len(),
        });
    }
    let objective = TiltObjective::new(params, horizon, payoff);
    let bounds = BoxBounds::upper_all(n, THETA_CAP);
    let anchor = vec![-1e-3; n];
    let start = shrink_into(params, &bounds, &anchor, &vec![-0.25; n]).ok_or_else(|| {
        Error::NotConverged("no strictly feasible starting tilt".into())
    })?;
    let m = barrier_minimize(
        &objective,
        &DomainBarrier { params },
        &bounds,
        &start,
        &BarrierSettings::default(),
    )?;
    if !m.converged {
        return Err(Error::NotConverged(format!(
            "tilt optimizer stopped at {:?} with gradient norm {:e}",
            m.x, m.grad_norm
        )));
    }
    Ok(ThetaStar {
        theta: m.x,
        objective: m.value,
        converged: true,
    })
}

/// `dP/dP_theta` on a path ending at `y_terminal`.
pub fn is_weight(params: &ModelParams, theta: &[f64], horizon: f64, y_terminal: &[f64]) -> Result<f64> {
    let log_mgf = log_laplace_y(params, theta, horizon)
        .value()
        .ok_or_else(|| Error::InvalidArgument(format!("E[exp(theta^T Y_T)] is infinite for {theta:?}")))?;
    Ok(weight_from(log_mgf, theta, y_terminal))
}

fn weight_from(log_mgf: f64, theta: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = theta.iter().zip(y).map(|(a, b)| a * b).sum();
    (log_mgf - dot).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub estimate: f64,
    pub stderr: f64,
    pub variance: f64,
    pub n_paths: usize,
    pub measure: MeasureSpec,
    pub wall_time: f64,
}

/// Discounted per-path samples `e^{-rT} payoff * weight`.
pub fn price_samples(
    params: &ModelParams,
    payoff: &PayoffSpec,
    cfg: &PathConfig,
    tilt: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let measure = match tilt {
        Some(t) => MeasureSpec::Tilted(t.to_vec()),
        None => MeasureSpec::Physical,
    };
    let batch = simulate(params, cfg, &measure)?;
    let discount = (-params.r * cfg.t).exp();
    let log_mgf = match tilt {
        Some(t) => Some(
            log_laplace_y(params, t, cfg.t)
                .value()
                .ok_or_else(|| Error::InvalidArgument(format!("E[exp(theta^T Y_T)] is infinite for {t:?}")))?,
        ),
        None => None,
    };
    Ok((0..batch.n_paths())
        .map(|p| {
            let y = batch.y(p);
            let w = match (tilt, log_mgf) {
                (Some(t), Some(l)) => weight_from(l, t, y),
                _ => 1.0,
            };
            discount * payoff.payoff(y) * w
        })
        .collect())
}

/// Plain (`tilt = None`) or importance-sampled price estimate.
pub fn price(
    params: &ModelParams,
    payoff: &PayoffSpec,
    cfg: &PathConfig,
    tilt: Option<&[f64]>,
) -> Result<McResult> {
    let start = Instant::now();
    let samples = price_samples(params, payoff, cfg, tilt)?;
    let s = summarize(&samples);
    Ok(McResult {
        estimate: s.mean,
        stderr: s.stderr,
        variance: s.variance,
        n_paths: s.n,
        measure: tilt.map_or(MeasureSpec::Physical, |t| MeasureSpec::Tilted(t.to_vec())),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRatio {
    pub ratio: f64,
    /// Spread of the per-batch ratios, divided by the square root of the batch count.
    pub ratio_stderr: f64,
    pub plain: McResult,
    pub tilted: McResult,
}

/// Seed of the tilted run paired with a plain run seeded by `seed`.
pub fn tilted_seed(seed: u64) -> u64 {
    seed.wrapping_add(TILTED_SEED_OFFSET)
}

/// `Var_P[payoff] / Var_{P_theta}[weight * payoff]` from two independent runs
/// of the same size.
pub fn variance_ratio(
    params: &ModelParams,
    payoff: &PayoffSpec,
    cfg: &PathConfig,
    theta: &[f64],
) -> Result<VarianceRatio> {
    let t0 = Instant::now();
    let plain_samples = price_samples(params, payoff, cfg, None)?;
    let plain_time = t0.elapsed().as_secs_f64();
    let mut tcfg = cfg.clone();
    tcfg.seed = tilted_seed(cfg.seed);
    let t1 = Instant::now();
    let tilted_samples = price_samples(params, payoff, &tcfg, Some(theta))?;
    let tilted_time = t1.elapsed().as_secs_f64();

    let sp = summarize(&plain_samples);
    let st = summarize(&tilted_samples);
    let per_batch: Vec<f64> = batch_variances(&plain_samples, VR_BATCHES)
        .iter()
        .zip(batch_variances(&tilted_samples, VR_BATCHES))
        .map(|(p, t)| p / t)
        .collect();
    let spread = summarize(&per_batch);
    let result = |s: crate::stats::Summary, measure, wall_time| McResult {
        estimate: s.mean,
        stderr: s.stderr,
        variance: s.variance,
        n_paths: s.n,
        measure,
        wall_time,
    };
    Ok(VarianceRatio {
        ratio: sp.variance / st.variance,
        ratio_stderr: spread.stderr,
        plain: result(sp, MeasureSpec::Physical, plain_time),
        tilted: result(st, MeasureSpec::Tilted(theta.to_vec()), tilted_time),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HALF: [f64; 2] = [0.5, 0.5];

    #[test]
    fn conjugate_reference_values() {
        assert_eq!(h_hat_basket_put(&[0.0, -0.5], 1.0, &HALF), ExtendedReal::PosInfinity);
        assert_eq!(h_hat_basket_put(&[0.3, -0.5], 1.0, &HALF), ExtendedReal::PosInfinity);
        let v = h_hat_basket_put(&[-0.5, -0.5], 1.0, &HALF).finite().unwrap();
        assert!((v + 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn conjugate_derivatives_match_differences() {
        let th = [-0.3, -0.7];
        let k = 0.9;
        let g = h_hat_gradient(&th, k, &HALF);
        let h = h_hat_hessian(&th);
        let eps = 1e-6;
        for j in 0..2 {
            let mut up = th;
            let mut dn = th;
            up[j] += eps;
            dn[j] -= eps;
            let f = |x: &[f64]| h_hat_basket_put(x, k, &HALF).finite().unwrap();
            let fd = (f(&up) - f(&dn)) / (2.0 * eps);
            assert!((fd - g[j]).abs() < 1e-6, "{fd} vs {}", g[j]);
            let gu = h_hat_gradient(&up, k, &HALF);
            let gd = h_hat_gradient(&dn, k, &HALF);
            for i in 0..2 {
                assert!(((gu[i] - gd[i]) / (2.0 * eps) - h[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn payoffs() {
        let put = PayoffSpec::basket_put(1.0, HALF.to_vec()).unwrap();
        assert!((put.payoff(&[0.0, (0.5f64).ln()]) - 0.25).abs() < 1e-15);
        assert_eq!(put.payoff(&[1.0, 1.0]), 0.0);
        let call = PayoffSpec::new(PayoffKind::BasketCall, 1.0, HALF.to_vec()).unwrap();
        assert!((call.payoff(&[(3f64).ln(), 0.0]) - 1.0).abs() < 1e-15);
        assert!(PayoffSpec::basket_put(0.0, HALF.to_vec()).is_err());
        assert!(PayoffSpec::basket_put(1.0, vec![0.7, 0.7]).is_err());
    }

    #[test]
    fn theta_star_is_a_negative_minimizer() {
        let p = ModelParams::basket_put_example();
        let payoff = PayoffSpec::basket_put(1.0, HALF.to_vec()).unwrap();
        let ts = theta_star(&p, 0.5, &payoff).unwrap();
        assert!(ts.theta.iter().all(|&t| t < 0.0));
        assert!(p.in_domain(&ts.theta).strict);
        let obj = TiltObjective::new(&p, 0.5, &payoff);
        let g = obj.gradient(&ts.theta).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-8);
        // minimality against a ring of nearby feasible points
        for k in 0..16 {
            let a = k as f64 * std::f64::consts::PI / 8.0;
            let th = [ts.theta[0] + 0.01 * a.cos(), ts.theta[1] + 0.01 * a.sin()];
            if let Some(v) = obj.eval(&th).finite() {
                assert!(v >= ts.objective);
            }
        }
    }

    #[test]
    fn call_payoff_has_no_tilt() {
        let p = ModelParams::basket_put_example();
        let payoff = PayoffSpec::new(PayoffKind::BasketCall, 1.0, HALF.to_vec()).unwrap();
        assert!(theta_star(&p, 0.5, &payoff).is_err());
    }

    #[test]
    fn zero_tilt_has_unit_weights() {
        let p = ModelParams::basket_put_example();
        for y in [[0.1, -0.3], [2.0, 5.0]] {
            assert_eq!(is_weight(&p, &[0.0, 0.0], 0.5, &y).unwrap(), 1.0);
        }
    }

    #[test]
    fn tiny_strike_prices_to_zero() {
        let p = ModelParams::basket_put_example();
        let payoff = PayoffSpec::basket_put(1e-300, HALF.to_vec()).unwrap();
        let cfg = PathConfig::new(0.5, 10, 500, 1).unwrap();
        let r = price(&p, &payoff, &cfg, None).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!(r.stderr, 0.0);
    }

    proptest! {
        #[test]
        fn conjugate_is_midpoint_convex(a in prop::array::uniform2(-3.0f64..-1e-3),
                                        b in prop::array::uniform2(-3.0f64..-1e-3)) {
            let f = |x: &[f64]| h_hat_basket_put(x, 1.1, &HALF).finite().unwrap();
            let m = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            prop_assert!(f(&m) <= 0.5 * (f(&a) + f(&b)) + 1e-10);
        }
    }
}
