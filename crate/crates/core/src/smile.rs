//! Long-maturity asymptotics of the basket implied volatility smile and the
//! Black–Scholes helpers used to read prices as volatilities.
//!
//! Strikes are renormalized log-strikes `y` with `k = y T` on a unit forward.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::ldp::{regime_constants, LaplaceExponent, RegimeConstants};
use crate::model::ModelParams;
use crate::optimize::BoxBounds;

/// Points closer than this to a regime constant are rejected.
pub const REGIME_EPS: f64 = 1e-9;
/// Radicands in `[-RADICAND_TOL, 0)` are clipped to zero.
pub const RADICAND_TOL: f64 = 1e-10;
const GOLDEN_TOL: f64 = 1e-10;
const IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Put,
    CoveredCall,
    Plateau,
    Call,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Put => "put",
            Regime::CoveredCall => "covered_call",
            Regime::Plateau => "plateau",
            Regime::Call => "call",
        }
    }

    /// `(xi, eta)` in `sigma = sqrt(2) (xi sqrt(L + y) + eta sqrt(L))`.
    ///
    /// On the plateau `L = 0` and the formula reduces to `sqrt(2y)` with
    /// `xi = 1`; `eta` is immaterial there and set to `-1`.
    pub fn signs(self) -> (f64, f64) {
        match self {
            Regime::Put => (-1.0, 1.0),
            Regime::CoveredCall => (1.0, 1.0),
            Regime::Plateau | Regime::Call => (1.0, -1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmilePoint {
    pub y: f64,
    pub regime: Regime,
    pub l: f64,
    pub sigma_inf: f64,
    pub xi: f64,
    pub eta: f64,
}

/// Classifies `y`, rejecting points on a regime boundary.
pub fn classify(rc: &RegimeConstants, y: f64) -> Result<Regime> {
    let near = |c: f64| (y - c).abs() <= REGIME_EPS;
    if rc.x_tilde_star.iter().any(|&c| near(c)) || near(rc.beta_star) {
        return Err(Error::DegenerateY { y });
    }
    Ok(if y < rc.beta_star {
        Regime::Put
    } else if y < rc.beta_hat_star {
        Regime::CoveredCall
    } else if y < rc.beta_tilde_star {
        Regime::Plateau
    } else {
        Regime::Call
    })
}

/// Golden-section minimum of a convex function on `[lo, hi]`.
fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let mut best = (lo, f(lo));
    for s in [c, d, hi] {
        let v = f(s);
        if v < best.1 {
            best = (s, v);
        }
    }
    best
}

/// Interval `{ s : base + s dir in U }`; `base` must lie in `U`.
pub fn feasible_interval(params: &ModelParams, base: &[f64], dir: &[f64]) -> (f64, f64) {
    let inside = |s: f64| {
        let th: Vec<f64> = base.iter().zip(dir).map(|(b, d)| b + s * d).collect();
        params.in_domain(&th).min_eig_phi >= 0.0
    };
    let reach = 2.0 * params.domain_bounding_radius()
        + base.iter().map(|v| v.abs()).sum::<f64>();
    let edge = |sign: f64| {
        let (mut lo, mut hi) = (0.0, reach);
        while hi - lo > 1e-15 * reach.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if inside(sign * mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        sign * lo
    };
    (edge(-1.0), edge(1.0))
}

/// `inf_s { -s y + Lambda(base + s dir) }` in the smile normalization.
pub fn line_infimum(params: &ModelParams, base: &[f64], dir: &[f64], y: f64) -> Result<f64> {
    let lam = LaplaceExponent::smile(params);
    if !lam.value(base).is_finite() {
        return Err(Error::OutOfDomain {
            min_eig_phi: params.in_domain(base).min_eig_phi,
        });
    }
    let (lo, hi) = feasible_interval(params, base, dir);
    let f = |s: f64| -s * y + lam.line(base, dir, s).to_f64();
    Ok(golden_section(f, lo, hi, GOLDEN_TOL).1)
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// `L(y)` and the regime of `y`. The plateau has no `L` branch of its own
/// and raises `PlateauRegime`.
pub fn big_l(params: &ModelParams, y: f64) -> Result<(f64, Regime)> {
    let rc = regime_constants(params)?;
    big_l_with(params, &rc, y)
}

fn big_l_with(params: &ModelParams, rc: &RegimeConstants, y: f64) -> Result<(f64, Regime)> {
    let n = params.n;
    let regime = classify(rc, y)?;
    let l = match regime {
        Regime::Put => {
            let lam = LaplaceExponent::smile(params);
            let bounds = BoxBounds::upper_all(n, 0.0);
            let r = lam.rate(&vec![y; n], Some(&bounds))?;
            if !r.converged {
                return Err(Error::NotConverged(format!(
                    "box-constrained Legendre transform at y = {y}"
                )));
            }
            -y + r.value
        }
        Regime::CoveredCall => {
            let zero = vec![0.0; n];
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                best = best.max(line_infimum(params, &zero, &unit(n, i), y)?);
            }
            -y - best
        }
        Regime::Call => {
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                for j in 0..n {
                    best = best.max(line_infimum(params, &unit(n, j), &unit(n, i), y)?);
                }
            }
            -best
        }
        Regime::Plateau => return Err(Error::PlateauRegime { y }),
    };
    Ok((l, regime))
}

fn clip_radicand(v: f64) -> Option<f64> {
    if v >= 0.0 {
        Some(v)
    } else if v >= -RADICAND_TOL {
        Some(0.0)
    } else {
        None
    }
}

/// `sigma_inf(y) = sqrt(2) (xi sqrt(L + y) + eta sqrt(L))` off the plateau.
pub fn sigma_infinity(params: &ModelParams, y: f64) -> Result<SmilePoint> {
    let rc = regime_constants(params)?;
    sigma_infinity_with(params, &rc, y)
}

fn sigma_infinity_with(params: &ModelParams, rc: &RegimeConstants, y: f64) -> Result<SmilePoint> {
    let (l, regime) = big_l_with(params, rc, y)?;
    let (Some(l_c), Some(ly_c)) = (clip_radicand(l), clip_radicand(l + y)) else {
        return Err(Error::NegativeRadicand { l, l_plus_y: l + y });
    };
    let (xi, eta) = regime.signs();
    let sigma = 2f64.sqrt() * (xi * ly_c.sqrt() + eta * l_c.sqrt());
    let check = 0.5 * (sigma / 2.0 - y / sigma).powi(2);
    if !((check - l_c).abs() <= IDENTITY_TOL * (1.0 + l_c)) {
        return Err(Error::NotConverged(format!(
            "smile identity fails at y = {y}: {check} vs L = {l_c}"
        )));
    }
    Ok(SmilePoint {
        y,
        regime,
        l: l_c,
        sigma_inf: sigma,
        xi,
        eta,
    })
}

/// Limiting smile in every regime; plateau points get `L = 0` and
/// `sigma_inf = sqrt(2y)`.
pub fn smile_point(params: &ModelParams, rc: &RegimeConstants, y: f64) -> Result<SmilePoint> {
    match classify(rc, y)? {
        Regime::Plateau => {
            let (xi, eta) = Regime::Plateau.signs();
            Ok(SmilePoint {
                y,
                regime: Regime::Plateau,
                l: 0.0,
                sigma_inf: (2.0 * y).sqrt(),
                xi,
                eta,
            })
        }
        _ => sigma_infinity_with(params, rc, y),
    }
}

/// Limiting undiscounted call price `sum_i omega_i 1{x~*_i > y}`.
pub fn c_infinity(params: &ModelParams, y: f64) -> Result<f64> {
    let rc = regime_constants(params)?;
    c_infinity_with(params, &rc, y)
}

fn c_infinity_with(params: &ModelParams, rc: &RegimeConstants, y: f64) -> Result<f64> {
    if rc.x_tilde_star.iter().any(|&c| (y - c).abs() <= REGIME_EPS) {
        return Err(Error::DegenerateY { y });
    }
    Ok(params
        .weights()
        .iter()
        .zip(&rc.x_tilde_star)
        .filter(|(_, &x)| x > y)
        .map(|(w, _)| w)
        .sum())
}

/// `sqrt(2y) + N^{-1}(C_inf(y)) / sqrt(T)` on the plateau.
pub fn plateau_sigma(params: &ModelParams, y: f64, t: f64) -> Result<f64> {
    let rc = regime_constants(params)?;
    if !(y > rc.beta_hat_star + REGIME_EPS && y < rc.beta_tilde_star - REGIME_EPS) {
        return Err(Error::OutOfPlateau { y });
    }
    let c = c_infinity_with(params, &rc, y)?;
    if c <= 0.0 || c >= 1.0 {
        return Err(Error::DegenerateC { c });
    }
    Ok((2.0 * y).sqrt() + std_normal().inverse_cdf(c) / t.sqrt())
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsQuote {
    pub t: f64,
    pub k: f64,
    pub sigma: f64,
    pub price: f64,
    pub is_call: bool,
}

impl BsQuote {
    pub fn new(t: f64, k: f64, sigma: f64, is_call: bool) -> Self {
        Self {
            t,
            k,
            sigma,
            price: bs_price(t, k, sigma, is_call),
            is_call,
        }
    }
}

fn d1_d2(t: f64, k: f64, sigma: f64) -> (f64, f64) {
    let sd = sigma * t.sqrt();
    let d1 = (-k + 0.5 * sd * sd) / sd;
    (d1, d1 - sd)
}

/// Undiscounted Black–Scholes price on a unit forward at log-strike `k`.
/// Puts are evaluated directly, not through parity, to keep deep
/// out-of-the-money values accurate.
pub fn bs_price(t: f64, k: f64, sigma: f64, is_call: bool) -> f64 {
    let (d1, d2) = d1_d2(t, k, sigma);
    if is_call {
        norm_cdf(d1) - k.exp() * norm_cdf(d2)
    } else {
        k.exp() * norm_cdf(-d2) - norm_cdf(-d1)
    }
}

fn bs_vega(t: f64, k: f64, sigma: f64) -> f64 {
    let (d1, _) = d1_d2(t, k, sigma);
    norm_pdf(d1) * t.sqrt()
}

/// No-arbitrage bounds of the undiscounted price.
pub fn price_bounds(k: f64, is_call: bool) -> (f64, f64) {
    if is_call {
        ((1.0 - k.exp()).max(0.0), 1.0)
    } else {
        ((k.exp() - 1.0).max(0.0), k.exp())
    }
}

const VOL_LO: f64 = 1e-8;
const VOL_HI: f64 = 10.0;

/// Black–Scholes implied volatility in `[1e-8, 10]` by safeguarded Newton.
pub fn bs_implied_vol(t: f64, k: f64, price: f64, is_call: bool) -> Result<f64> {
    let (lower, upper) = price_bounds(k, is_call);
    let f = |s: f64| bs_price(t, k, s, is_call) - price;
    let out = || Error::OutOfBounds {
        price,
        lower,
        upper,
    };
    if !(price > lower && price < upper) {
        return Err(out());
    }
    let (mut lo, mut hi) = (VOL_LO, VOL_HI);
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(out());
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    let mut s = 0.5;
    for _ in 0..200 {
        let v = f(s);
        if v == 0.0 {
            return Ok(s);
        }
        if v < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let vega = bs_vega(t, k, s);
        let newton = s - v / vega;
        s = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi || (v.abs() <= 1e-15 && (newton - s).abs() <= 1e-15) {
            break;
        }
    }
    Ok(s)
}
