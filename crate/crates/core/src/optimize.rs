//! Damped-Newton barrier method for small smooth convex problems.
//!
//! The problems solved here (Legendre transforms of the Laplace exponent,
//! the importance-sampling objective) are smooth convex functions on a
//! bounded convex set whose boundary is where `phi(theta)` loses positive
//! definiteness. Feasibility is kept with a logarithmic barrier on
//! `det phi(theta)` (a concave function of theta, since `phi` is
//! matrix-concave) plus log barriers for optional coordinate bounds.

use crate::error::{Error, Result};
use crate::matfun::Lu;

/// Value, gradient and Hessian of a convex objective.
pub trait ConvexObjective {
    fn dim(&self) -> usize;
    /// `None` outside the effective domain.
    fn value(&self, x: &[f64]) -> Option<f64>;
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>>;
    fn hessian(&self, x: &[f64]) -> Option<Vec<Vec<f64>>>;
}

/// A smooth concave constraint function `c(x) > 0` on the interior.
pub trait BarrierConstraint {
    /// `(log c(x), grad log c(x), hess log c(x))`, `None` if `c(x) <= 0`.
    fn log_barrier(&self, x: &[f64]) -> Option<(f64, Vec<f64>, Vec<Vec<f64>>)>;
}

/// Per-coordinate bounds `lower_i < x_i < upper_i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

impl BoxBounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![None; n],
            upper: vec![None; n],
        }
    }

    /// `x_i <= u` on every coordinate.
    pub fn upper_all(n: usize, u: f64) -> Self {
        Self {
            lower: vec![None; n],
            upper: vec![Some(u); n],
        }
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(Option::is_none)
    }

    pub fn active_count(&self) -> usize {
        self.lower.iter().chain(&self.upper).filter(|b| b.is_some()).count()
    }

    pub fn strictly_inside(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, &v)| {
            self.lower.get(i).copied().flatten().map_or(true, |l| v > l)
                && self.upper.get(i).copied().flatten().map_or(true, |u| v < u)
        })
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.iter().enumerate().all(|(i, &v)| {
            self.lower.get(i).copied().flatten().map_or(true, |l| v >= l - slack)
                && self.upper.get(i).copied().flatten().map_or(true, |u| v <= u + slack)
        })
    }
}

#[derive(Debug, Clone)]
pub struct BarrierSettings {
    pub mu_start: f64,
    pub mu_end: f64,
    pub mu_factor: f64,
    pub grad_tol: f64,
    pub gap_tol: f64,
    pub max_newton: usize,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            mu_start: 1e-2,
            mu_end: 1e-10,
            mu_factor: 0.1,
            grad_tol: 1e-8,
            gap_tol: 1e-7,
            max_newton: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

struct Penalized<'a, F, C> {
    f: &'a F,
    c: &'a C,
    bounds: &'a BoxBounds,
    mu: f64,
}

impl<F: ConvexObjective, C: BarrierConstraint> Penalized<'_, F, C> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        if !self.bounds.strictly_inside(x) {
            return None;
        }
        let (lc, _, _) = self.c.log_barrier(x)?;
        let mut v = self.f.value(x)? - self.mu * lc;
        for (i, &xi) in x.iter().enumerate() {
            if let Some(u) = self.bounds.upper[i] {
                v -= self.mu * (u - xi).ln();
            }
            if let Some(l) = self.bounds.lower[i] {
                v -= self.mu * (xi - l).ln();
            }
        }
        v.is_finite().then_some(v)
    }

    fn derivatives(&self, x: &[f64]) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = x.len();
        let (_, gc, hc) = self.c.log_barrier(x)?;
        let mut g = self.f.gradient(x)?;
        let mut h = self.f.hessian(x)?;
        for i in 0..n {
            g[i] -= self.mu * gc[i];
            for j in 0..n {
                h[i][j] -= self.mu * hc[i][j];
            }
            if let Some(u) = self.bounds.upper[i] {
                let s = u - x[i];
                g[i] += self.mu / s;
                h[i][i] += self.mu / (s * s);
            }
            if let Some(l) = self.bounds.lower[i] {
                let s = x[i] - l;
                g[i] -= self.mu / s;
                h[i][i] += self.mu / (s * s);
            }
        }
        Some((g, h))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton direction `-H^{-1} g`, falling back to steepest descent when the
/// Hessian is not usable.
fn newton_direction(g: &[f64], h: &[Vec<f64>]) -> Vec<f64> {
    let n = g.len();
    let flat: Vec<f64> = h.iter().flatten().copied().collect();
    let m = crate::matfun::Matrix::from_row_major(n, flat).expect("square Hessian");
    let lu = Lu::new(&m);
    let det = lu.det();
    if det.is_finite() && det > 0.0 {
        let d = lu.solve(g);
        let descent: f64 = d.iter().zip(g).map(|(a, b)| a * b).sum();
        if d.iter().all(|v| v.is_finite()) && descent > 0.0 {
            return d.iter().map(|v| -v).collect();
        }
    }
    g.iter().map(|v| -v).collect()
}

/// Minimizes `f` over `{ c > 0 } ∩ bounds` starting from a strictly feasible
/// point, following the barrier path `mu -> 0`.
pub fn barrier_minimize<F: ConvexObjective, C: BarrierConstraint>(
    f: &F,
    c: &C,
    bounds: &BoxBounds,
    start: &[f64],
    settings: &BarrierSettings,
) -> Result<Minimum> {
    let n = f.dim();
    let mut x = start.to_vec();
    if !bounds.strictly_inside(&x) || c.log_barrier(&x).is_none() || f.value(&x).is_none() {
        return Err(Error::InvalidArgument(format!(
            "optimizer start {x:?} is not strictly feasible"
        )));
    }
    let mut mu = settings.mu_start;
    loop {
        let pen = Penalized { f, c, bounds, mu };
        for _ in 0..settings.max_newton {
            let Some((g, h)) = pen.derivatives(&x) else {
                break;
            };
            let dir = newton_direction(&g, &h);
            let decrement: f64 = -dir.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            if decrement < 1e-24 || norm(&g) < 1e-14 {
                break;
            }
            let f0 = pen.value(&x).expect("iterate stays feasible");
            // Below this decrement the Armijo test drowns in rounding of f; the
            // full Newton step is taken if it stays feasible.
            let tiny = decrement < 1e-12 * (1.0 + f0.abs());
            let mut step = 1.0;
            let mut next = None;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                if let Some(ft) = pen.value(&trial) {
                    if tiny || ft <= f0 - 1e-4 * step * decrement {
                        next = Some(trial);
                        break;
                    }
                }
                step *= 0.5;
            }
            match next {
                Some(t) if t != x => x = t,
                _ => break,
            }
            if tiny && step == 1.0 && decrement < 1e-20 {
                break;
            }
        }
        if mu <= settings.mu_end {
            break;
        }
        mu = (mu * settings.mu_factor).max(settings.mu_end);
    }

    let value = f.value(&x).ok_or_else(|| {
        Error::NotConverged("optimizer left the domain".to_string())
    })?;
    let grad = f.gradient(&x).unwrap_or_else(|| vec![f64::INFINITY; n]);
    let grad_norm = norm(&grad);
    let gap = settings.mu_end * (1 + bounds.active_count()) as f64;
    let converged = grad_norm <= settings.grad_tol
        || (!bounds.is_unbounded() && gap <= settings.gap_tol && kkt_holds(&x, &grad, bounds));
    Ok(Minimum {
        x,
        value,
        grad_norm,
        converged,
    })
}

/// Projected-gradient check for a box-constrained minimum: free coordinates
/// have (near) zero gradient, coordinates at a bound push outward.
fn kkt_holds(x: &[f64], grad: &[f64], bounds: &BoxBounds) -> bool {
    const NEAR: f64 = 1e-6;
    const TOL: f64 = 1e-6;
    x.iter().enumerate().all(|(i, &xi)| {
        let at_upper = bounds.upper[i].map_or(false, |u| u - xi <= NEAR);
        let at_lower = bounds.lower[i].map_or(false, |l| xi - l <= NEAR);
        if at_upper {
            grad[i] <= TOL
        } else if at_lower {
            grad[i] >= -TOL
        } else {
            grad[i].abs() <= TOL
        }
    })
}
