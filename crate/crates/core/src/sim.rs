//! Euler simulation of `(X, Y)` under the physical measure and under the
//! exponentially tilted measures `P_theta`.
//!
//! `X` is advanced with a symmetrized Euler step followed by eigenvalue
//! clipping, `Y` with the trapezoidal rule on `X`. Under `P_theta` the drift
//! of `X` uses `b + 2 gamma_theta(T - t)` evaluated at the step midpoint and
//! the drift of `Y` gains `a^T X a theta`.
//!
//! Path `p` draws its normals from a ChaCha8 stream selected by `p`, so the
//! output does not depend on how paths are spread over threads.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::laplace::{gamma_theta, log_laplace_y};
use crate::matfun::{cholesky_unchecked, sym_eigen, Matrix, SymMatrix, PSD_TOL};
use crate::model::ModelParams;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "WISHART_LDP_THREADS";
const CHOLESKY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerPsd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub t: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Keep `X_T` for every path.
    pub store_x: bool,
    /// Worker threads; `None` reads `WISHART_LDP_THREADS`, else all cores.
    pub workers: Option<usize>,
}

impl PathConfig {
    pub fn new(t: f64, n_steps: usize, n_paths: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            t,
            n_steps,
            n_paths,
            seed,
            scheme: Scheme::EulerPsd,
            store_x: false,
            workers: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Steps of length as close to `dt` as possible (at least one).
    pub fn with_dt(t: f64, dt: f64, n_paths: usize, seed: u64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Self::new(t, ((t / dt).round() as usize).max(1), n_paths, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", self.t)));
        }
        if self.n_steps == 0 || self.n_paths == 0 {
            return Err(Error::InvalidArgument(
                "n_steps and n_paths must be at least 1".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t / self.n_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSpec {
    Physical,
    Tilted(Vec<f64>),
}

impl MeasureSpec {
    pub fn theta(&self) -> Option<&[f64]> {
        match self {
            MeasureSpec::Physical => None,
            MeasureSpec::Tilted(t) => Some(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalBatch {
    pub n: usize,
    /// `n_paths x n`, path-major.
    pub y_terminal: Vec<f64>,
    pub x_terminal: Option<Vec<SymMatrix>>,
    pub config: PathConfig,
    pub measure: MeasureSpec,
}

impl TerminalBatch {
    pub fn n_paths(&self) -> usize {
        self.y_terminal.len() / self.n
    }

    pub fn y(&self, path: usize) -> &[f64] {
        &self.y_terminal[path * self.n..(path + 1) * self.n]
    }
}

/// Source of standard normal draws.
pub trait NoiseSource {
    fn fill(&mut self, buf: &mut [f64]);
}

/// ChaCha8 stream `path` of generator `seed`.
pub struct PathRng(ChaCha8Rng);

impl PathRng {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self(rng)
    }
}

impl NoiseSource for PathRng {
    fn fill(&mut self, buf: &mut [f64]) {
        for v in buf.iter_mut() {
            *v = self.0.sample(StandardNormal);
        }
    }
}

/// All-zero noise, for deterministic checks of the drift.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill(&mut self, buf: &mut [f64]) {
        buf.fill(0.0);
    }
}

/// Eigenvalue clipping onto the PSD cone.
fn clip_psd(m: &SymMatrix) -> SymMatrix {
    let dec = sym_eigen(m);
    if dec.min_eigenvalue() >= 0.0 {
        m.clone()
    } else {
        dec.map(|v| v.max(0.0))
    }
}

/// One Euler step of the Wishart SDE with drift coefficient `b_eff`;
/// `noise` holds `n^2` standard normals in row-major order.
pub fn step_x(
    params: &ModelParams,
    x_cur: &SymMatrix,
    b_eff: &SymMatrix,
    dt: f64,
    noise: &[f64],
) -> SymMatrix {
    let n = params.n;
    let root = sym_eigen(x_cur).map(|v| v.max(0.0).sqrt());
    let sdt = dt.sqrt();
    let dw = Matrix::from_row_major(n, noise.iter().map(|z| z * sdt).collect())
        .expect("n^2 normals per step");
    let shock = root.as_matrix() * &dw;
    let bx = b_eff.as_matrix() * x_cur.as_matrix();
    let mut next = x_cur.as_matrix().clone();
    for i in 0..n {
        for j in 0..n {
            let drift = bx[(i, j)] + bx[(j, i)] + if i == j { params.alpha } else { 0.0 };
            next[(i, j)] += drift * dt + shock[(i, j)] + shock[(j, i)];
        }
    }
    clip_psd(&SymMatrix::symmetrized(&next))
}

/// Lower Cholesky factor of a PSD matrix, lifted by `1e-12 I` when needed.
fn psd_cholesky(m: &SymMatrix) -> Matrix {
    if let Some(l) = cholesky_unchecked(m.as_matrix()) {
        return l;
    }
    let n = m.dim();
    let lifted = clip_psd(m).add(&SymMatrix::identity(n).scale(CHOLESKY_FLOOR));
    cholesky_unchecked(lifted.as_matrix()).expect("lifted PSD matrix is positive definite")
}

/// Trapezoidal step of the log-prices; `noise` holds `n` standard normals.
pub fn step_y(
    params: &ModelParams,
    y_cur: &[f64],
    x_cur: &SymMatrix,
    x_next: &SymMatrix,
    theta_drift: Option<&[f64]>,
    dt: f64,
    noise: &[f64],
) -> Vec<f64> {
    let n = params.n;
    let x_bar = x_cur.add(x_next).scale(0.5);
    let cov = x_bar.congruence(&params.a);
    let l = psd_cholesky(&cov);
    let tilt = theta_drift.map(|th| cov.mul_vec(th));
    let sdt = dt.sqrt();
    (0..n)
        .map(|i| {
            let mut drift = params.r - 0.5 * cov[(i, i)];
            if let Some(t) = &tilt {
                drift += t[i];
            }
            let diffusion: f64 = (0..=i).map(|k| l[(i, k)] * noise[k]).sum();
            y_cur[i] + drift * dt + diffusion * sdt
        })
        .collect()
}

/// Drift coefficients `b + 2 gamma_theta(T - t_mid)` for every step, or `b`
/// repeated under the physical measure.
pub fn drift_schedule(
    params: &ModelParams,
    cfg: &PathConfig,
    measure: &MeasureSpec,
) -> Result<Vec<SymMatrix>> {
    let dt = cfg.dt();
    match measure.theta() {
        None => Ok(vec![params.b.clone(); cfg.n_steps]),
        Some(theta) => (0..cfg.n_steps)
            .map(|i| {
                let tau = cfg.t - (i as f64 + 0.5) * dt;
                let g = gamma_theta(params, theta, tau)?;
                Ok(params.b.add(&g.scale(2.0)))
            })
            .collect(),
    }
}

/// Simulates one path with the given noise; returns `(Y_T, X_T)`.
pub fn simulate_path<N: NoiseSource>(
    params: &ModelParams,
    cfg: &PathConfig,
    schedule: &[SymMatrix],
    theta: Option<&[f64]>,
    noise: &mut N,
) -> (Vec<f64>, SymMatrix) {
    let n = params.n;
    let dt = cfg.dt();
    let mut buf = vec![0.0; n * n + n];
    let mut x = params.x0.clone();
    let mut y = params.y0.clone();
    for b_eff in schedule {
        noise.fill(&mut buf);
        let x_next = step_x(params, &x, b_eff, dt, &buf[..n * n]);
        y = step_y(params, &y, &x, &x_next, theta, dt, &buf[n * n..]);
        x = x_next;
    }
    (y, x)
}

/// Worker count: explicit setting, else `WISHART_LDP_THREADS`, else all cores.
pub fn worker_count(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| {
            std::env::var(THREADS_ENV)
                .ok()
                .and_then(|v| v.trim().parse::<usize>().ok())
                .filter(|&w| w > 0)
        })
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f(path)` for every path on a pool of `workers` threads and returns
/// the results in path order.
pub fn par_paths<T: Send, F: Fn(usize) -> T + Sync + Send>(
    n_paths: usize,
    workers: Option<usize>,
    f: F,
) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(workers))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n_paths).into_par_iter().map(f).collect()))
}

fn check_measure(params: &ModelParams, cfg: &PathConfig, measure: &MeasureSpec) -> Result<()> {
    if let Some(theta) = measure.theta() {
        if theta.len() != params.n {
            return Err(Error::Dimension {
                expected: params.n,
                got: theta.len(),
            });
        }
        let dom = params.in_domain(theta);
        if !dom.inside {
            return Err(Error::OutOfDomain {
                min_eig_phi: dom.min_eig_phi,
            });
        }
        if !log_laplace_y(params, theta, cfg.t).finite {
            return Err(Error::InvalidArgument(format!(
                "E[exp(theta^T Y_T)] is infinite for theta = {theta:?}"
            )));
        }
    }
    Ok(())
}

/// Simulates `cfg.n_paths` independent terminal values under `measure`.
pub fn simulate(
    params: &ModelParams,
    cfg: &PathConfig,
    measure: &MeasureSpec,
) -> Result<TerminalBatch> {
    params.ensure_valid()?;
    cfg.validate()?;
    check_measure(params, cfg, measure)?;
    let schedule = drift_schedule(params, cfg, measure)?;
    let theta = measure.theta();
    let paths = par_paths(cfg.n_paths, cfg.workers, |p| {
        let mut rng = PathRng::new(cfg.seed, p as u64);
        simulate_path(params, cfg, &schedule, theta, &mut rng)
    })?;
    let n = params.n;
    let mut y_terminal = Vec::with_capacity(cfg.n_paths * n);
    let mut xs = cfg.store_x.then(|| Vec::with_capacity(cfg.n_paths));
    for (y, x) in paths {
        y_terminal.extend_from_slice(&y);
        if let Some(xs) = xs.as_mut() {
            xs.push(x);
        }
    }
    Ok(TerminalBatch {
        n,
        y_terminal,
        x_terminal: xs,
        config: cfg.clone(),
        measure: measure.clone(),
    })
}

const MAGIC: &[u8; 8] = b"WLDPTB\0\0";
const VERSION: u32 = 1;
const FLAG_X: u32 = 1;

/// Writes a batch as: magic, version, flags, n, n_paths, seed, then per path
/// `Y_T` (and `X_T` row-major when present) as little-endian `f64`.
pub fn write_batch(path: &Path, batch: &TerminalBatch) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if batch.x_terminal.is_some() { FLAG_X } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(batch.n as u32).to_le_bytes());
    out.extend_from_slice(&(batch.n_paths() as u64).to_le_bytes());
    out.extend_from_slice(&batch.config.seed.to_le_bytes());
    for p in 0..batch.n_paths() {
        for v in batch.y(p) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(xs) = &batch.x_terminal {
            for v in xs[p].as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Terminal samples read back from [`write_batch`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDump {
    pub n: usize,
    pub seed: u64,
    pub y_terminal: Vec<f64>,
    pub x_terminal: Option<Vec<SymMatrix>>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn bad(&self, what: &str) -> Error {
        Error::Io(format!("{}: {what}", self.path.display()))
    }

    fn take<const K: usize>(&mut self) -> Result<[u8; K]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + K)
            .ok_or_else(|| self.bad("truncated file"))?;
        self.pos += K;
        Ok(s.try_into().expect("slice of length K"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub fn read_batch(path: &Path) -> Result<BatchDump> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if &cur.take::<8>()? != MAGIC {
        return Err(cur.bad("not a terminal batch dump"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(cur.bad(&format!("unsupported version {version}")));
    }
    let flags = cur.u32()?;
    let n = cur.u32()? as usize;
    let n_paths = cur.u64()? as usize;
    let seed = cur.u64()?;
    let mut y_terminal = Vec::with_capacity(n_paths.min(1 << 24) * n);
    let mut xs = (flags & FLAG_X != 0).then(Vec::new);
    for _ in 0..n_paths {
        for _ in 0..n {
            y_terminal.push(cur.f64()?);
        }
        if let Some(xs) = xs.as_mut() {
            let data = (0..n * n).map(|_| cur.f64()).collect::<Result<Vec<f64>>>()?;
            xs.push(SymMatrix::new(Matrix::from_row_major(n, data)?)?);
        }
    }
    Ok(BatchDump {
        n,
        seed,
        y_terminal,
        x_terminal: xs,
    })
}

/// Smallest eigenvalue over a batch of matrices.
pub fn min_stored_eigenvalue(xs: &[SymMatrix]) -> f64 {
    xs.iter()
        .map(|x| sym_eigen(x).min_eigenvalue())
        .fold(f64::INFINITY, f64::min)
}

/// `true` when every stored `X_T` is PSD within tolerance.
pub fn all_psd(xs: &[SymMatrix]) -> bool {
    min_stored_eigenvalue(xs) >= -PSD_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::summarize;

    #[test]
    fn deterministic_x_steps() {
        let p = ModelParams::smile_example();
        let dt = 0.01;
        let zero = vec![0.0; 4];
        let x = step_x(&p, &SymMatrix::zeros(2), &SymMatrix::zeros(2), dt, &zero);
        assert_eq!(x, SymMatrix::identity(2).scale(p.alpha * dt));

        let x = step_x(&p, &SymMatrix::identity(2), &p.b, dt, &zero);
        let expected = SymMatrix::identity(2)
            .add(&SymMatrix::identity(2).scale(p.alpha * dt))
            .add(&p.b.scale(2.0 * dt));
        assert!((x.as_matrix() - expected.as_matrix()).max_abs() < 1e-15);
    }

    #[test]
    fn deterministic_y_steps() {
        let p = ModelParams::smile_example();
        let dt = 0.02;
        // a^T X a = I for X = diag(1/a_ii^2)
        let x = SymMatrix::from_diag(&[25.0, 1.0 / 0.09]);
        let y = step_y(&p, &[0.0, 0.0], &x, &x, None, dt, &[0.0, 0.0]);
        assert!((y[0] + 0.5 * dt).abs() < 1e-15 && (y[1] + 0.5 * dt).abs() < 1e-15);
        let th = [0.3, -0.2];
        let yt = step_y(&p, &[0.0, 0.0], &x, &x, Some(&th), dt, &[0.0, 0.0]);
        for i in 0..2 {
            assert!((yt[i] - y[i] - th[i] * dt).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_noise_path_follows_the_drift() {
        let p = ModelParams::smile_example();
        let cfg = PathConfig::new(0.1, 1, 1, 0).unwrap();
        let sched = drift_schedule(&p, &cfg, &MeasureSpec::Physical).unwrap();
        let (y, x) = simulate_path(&p, &cfg, &sched, None, &mut ZeroNoise);
        let x1 = step_x(&p, &p.x0, &p.b, 0.1, &[0.0; 4]);
        let y1 = step_y(&p, &p.y0, &p.x0, &x1, None, 0.1, &[0.0; 2]);
        assert_eq!(x, x1);
        assert_eq!(y, y1);
    }

    #[test]
    fn first_moment_of_one_step() {
        let p = ModelParams::smile_example();
        let dt = 0.01;
        let mut rng = PathRng::new(7, 0);
        let mut z = [0.0; 4];
        let traces: Vec<f64> = (0..100_000)
            .map(|_| {
                rng.fill(&mut z);
                step_x(&p, &p.x0, &p.b, dt, &z).trace()
            })
            .collect();
        let s = summarize(&traces);
        let exact = p.x0.trace()
            + (2.0 * p.alpha + 2.0 * p.b.as_matrix().trace_product(p.x0.as_matrix())) * dt;
        assert!((s.mean - exact).abs() < 3.0 * s.stderr, "{} vs {exact} ({})", s.mean, s.stderr);
    }

    #[test]
    fn reproducible_across_worker_counts() {
        let p = ModelParams::basket_put_example();
        let mut cfg = PathConfig::new(0.5, 20, 257, 42).unwrap();
        cfg.store_x = true;
        cfg.workers = Some(1);
        let a = simulate(&p, &cfg, &MeasureSpec::Tilted(vec![-0.5, -0.5])).unwrap();
        cfg.workers = Some(5);
        let b = simulate(&p, &cfg, &MeasureSpec::Tilted(vec![-0.5, -0.5])).unwrap();
        assert_eq!(a.y_terminal, b.y_terminal);
        assert_eq!(a.x_terminal, b.x_terminal);
        assert!(all_psd(a.x_terminal.as_ref().unwrap()));
    }

    #[test]
    fn dump_round_trip() {
        let p = ModelParams::smile_example();
        let mut cfg = PathConfig::new(0.2, 4, 9, 3).unwrap();
        cfg.store_x = true;
        let b = simulate(&p, &cfg, &MeasureSpec::Physical).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        write_batch(&path, &b).unwrap();
        let d = read_batch(&path).unwrap();
        assert_eq!(d.n, 2);
        assert_eq!(d.seed, 3);
        assert_eq!(d.y_terminal, b.y_terminal);
        assert_eq!(d.x_terminal, b.x_terminal);
        std::fs::write(&path, b"garbage").unwrap();
        assert!(read_batch(&path).is_err());
    }

    #[test]
    fn tilted_measure_outside_domain_is_rejected() {
        let p = ModelParams::smile_example();
        let cfg = PathConfig::new(0.5, 10, 10, 0).unwrap();
        assert!(simulate(&p, &cfg, &MeasureSpec::Tilted(vec![50.0, 50.0])).is_err());
        assert!(PathConfig::new(0.0, 10, 10, 0).is_err());
        assert!(PathConfig::new(1.0, 0, 10, 0).is_err());
    }
}
