//! Command-line front end. Every command writes CSV preceded by `#` comment
//! lines echoing the resolved configuration and its SHA-256 digest.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::impsamp::{self, PayoffKind, PayoffSpec};
use crate::laplace::log_laplace_y;
use crate::ldp::{regime_constants, LaplaceExponent};
use crate::model::{ModelParams, ModelParamsFile};
use crate::optimize::BoxBounds;
use crate::sim::{simulate, MeasureSpec, PathConfig};
use crate::smile::{self, Regime};
use crate::stats::control_variate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MODEL: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Comma-separated list of reals, e.g. `0.3,-0.2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(pub Vec<f64>);

impl FromStr for Vector {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Vector)
    }
}

/// Evenly spaced grid `start:end:count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

impl FromStr for Grid {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(format!("expected start:end:count, got {s:?}"));
        };
        let start: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
        let end: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
        let count: usize = c.trim().parse().map_err(|e| format!("{c:?}: {e}"))?;
        Ok(Grid(match count {
            0 => vec![],
            1 => vec![start],
            _ => (0..count)
                .map(|i| start + (end - start) * i as f64 / (count - 1) as f64)
                .collect(),
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Two-asset parameters of the smile experiments.
    Smile,
    /// Two-asset parameters of the basket put experiments.
    Basket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Put,
    Call,
}

#[derive(Debug, Parser)]
#[command(
    name = "wishart-ldp",
    version,
    about = "Large deviations, asymptotic smiles and importance sampling in the Wishart stochastic volatility model"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model parameters as JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in parameter set, used when --config is absent.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Output CSV file (stdout if absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Monte Carlo paths.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Time steps per path (overrides --dt).
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Time step.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Leave out wall-clock columns so output is byte-reproducible.
    #[arg(long, global = true)]
    pub no_timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form log E[exp(theta^T Y_t)].
    Laplace {
        #[arg(long = "theta", required = true, allow_hyphen_values = true)]
        theta: Vec<Vector>,
        /// Horizons.
        #[arg(long, default_value = "1")]
        t: Vector,
    },
    /// Long-time Laplace exponent Lambda(theta).
    Lambda {
        #[arg(long = "theta", required = true, allow_hyphen_values = true)]
        theta: Vec<Vector>,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// Use r = 0 (the smile normalization).
        #[arg(long)]
        zero_rate: bool,
    },
    /// Rate function Lambda*(y).
    Rate {
        #[arg(long = "y", required = true, allow_hyphen_values = true)]
        y: Vec<Vector>,
        /// Restrict lambda_i <= this bound.
        #[arg(long)]
        box_upper: Option<f64>,
    },
    /// Limiting implied volatility sigma_inf(y).
    SmileAsymptotic {
        #[command(flatten)]
        grid: YGrid,
    },
    /// Monte Carlo implied volatilities at renormalized strikes k = yT.
    SmileMc {
        #[command(flatten)]
        grid: YGrid,
        #[arg(long, default_value = "1,2,5,10,25,50")]
        maturities: Vector,
    },
    /// Basket option price, plain or importance sampled.
    Price {
        #[arg(long)]
        strike: f64,
        #[arg(long)]
        maturity: f64,
        #[arg(long, value_enum, default_value_t = Kind::Put)]
        kind: Kind,
        /// Explicit tilt.
        #[arg(long, conflicts_with = "optimal_tilt", allow_hyphen_values = true)]
        theta: Option<Vector>,
        /// Tilt by the asymptotically optimal theta (puts only).
        #[arg(long)]
        optimal_tilt: bool,
    },
    /// Asymptotically optimal tilt for a basket put.
    ThetaStar {
        #[arg(long)]
        strike: f64,
        #[arg(long)]
        maturity: f64,
    },
    /// Plain vs optimally tilted variance for one basket put.
    VarianceRatio {
        #[arg(long)]
        strike: f64,
        #[arg(long)]
        maturity: f64,
    },
    /// Replica of the maturity/strike table of variance ratios.
    Table1 {
        /// Rows as `T:K` pairs separated by commas (default: the full table).
        #[arg(long)]
        rows: Option<String>,
    },
    /// Quick invariant checks.
    Selftest,
}

#[derive(Debug, Clone, Args)]
pub struct YGrid {
    /// Explicit renormalized log-strikes.
    #[arg(long, allow_hyphen_values = true)]
    pub y: Option<Vector>,
    /// Grid `start:end:count`.
    #[arg(long, conflicts_with = "y", allow_hyphen_values = true)]
    pub y_grid: Option<Grid>,
}

impl YGrid {
    fn values(&self) -> Result<Vec<f64>> {
        let v = match (&self.y, &self.y_grid) {
            (Some(v), _) => v.0.clone(),
            (None, Some(g)) => g.0.clone(),
            (None, None) => vec![],
        };
        if v.is_empty() {
            return Err(Error::InvalidArgument(
                "empty y-grid: pass --y or --y-grid".into(),
            ));
        }
        Ok(v)
    }
}

/// Rows of the published table: `(maturity, strike)`.
pub const TABLE1_ROWS: [(f64, f64); 13] = [
    (0.5, 0.7),
    (0.5, 0.8),
    (0.5, 0.9),
    (0.5, 1.0),
    (0.5, 1.1),
    (0.5, 1.2),
    (0.5, 1.3),
    (0.5, 1.4),
    (0.25, 1.0),
    (1.0, 1.0),
    (2.0, 1.0),
    (3.0, 1.0),
    (5.0, 1.0),
];

const DEFAULT_PATHS: usize = 20_000;
const TABLE1_DT: f64 = 1.0 / 40.0;
const SMILE_MC_DT: f64 = 0.1;

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    // -0.0 prints as 0
    format!("{:.16e}", x + 0.0)
}

fn fmt_vec(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| fmt_f64(x)).collect()
}

/// CSV document with `#` header lines.
struct Csv {
    header: Vec<String>,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn new(columns: Vec<String>) -> Self {
        Self {
            header: vec![],
            columns,
            rows: vec![],
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            let _ = writeln!(s, "# {h}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

fn cols(parts: &[&[String]]) -> Vec<String> {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn check_dim(params: &ModelParams, v: &[f64]) -> Result<()> {
    if v.len() != params.n {
        return Err(Error::Dimension {
            expected: params.n,
            got: v.len(),
        });
    }
    Ok(())
}

struct Context {
    params: ModelParams,
    common: Common,
    config: Value,
}

impl Context {
    fn paths(&self) -> usize {
        self.common.paths.unwrap_or(DEFAULT_PATHS)
    }

    fn path_config(&self, t: f64, default_dt: f64, seed: u64) -> Result<PathConfig> {
        match self.common.steps {
            Some(steps) => PathConfig::new(t, steps, self.paths(), seed),
            None => PathConfig::with_dt(t, self.common.dt.unwrap_or(default_dt), self.paths(), seed),
        }
    }
}

fn load_params(common: &Common, default: Preset) -> Result<ModelParams> {
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        return ModelParams::from_json(&text);
    }
    Ok(match common.preset.unwrap_or(default) {
        Preset::Smile => ModelParams::smile_example(),
        Preset::Basket => ModelParams::basket_put_example(),
    })
}

fn default_preset(cmd: &Command) -> Preset {
    match cmd {
        Command::Price { .. }
        | Command::ThetaStar { .. }
        | Command::VarianceRatio { .. }
        | Command::Table1 { .. } => Preset::Basket,
        _ => Preset::Smile,
    }
}

fn command_json(cmd: &Command) -> Value {
    let v = |x: &Vector| json!(x.0);
    match cmd {
        Command::Laplace { theta, t } => json!({
            "name": "laplace", "theta": theta.iter().map(v).collect::<Vec<_>>(), "t": v(t)
        }),
        Command::Lambda {
            theta,
            horizon,
            zero_rate,
        } => json!({
            "name": "lambda", "theta": theta.iter().map(v).collect::<Vec<_>>(),
            "horizon": horizon, "zero_rate": zero_rate
        }),
        Command::Rate { y, box_upper } => json!({
            "name": "rate", "y": y.iter().map(v).collect::<Vec<_>>(), "box_upper": box_upper
        }),
        Command::SmileAsymptotic { grid } => json!({
            "name": "smile-asymptotic", "y": grid.values().unwrap_or_default()
        }),
        Command::SmileMc { grid, maturities } => json!({
            "name": "smile-mc", "y": grid.values().unwrap_or_default(), "maturities": v(maturities)
        }),
        Command::Price {
            strike,
            maturity,
            kind,
            theta,
            optimal_tilt,
        } => json!({
            "name": "price", "strike": strike, "maturity": maturity,
            "kind": format!("{kind:?}").to_lowercase(),
            "theta": theta.as_ref().map(v), "optimal_tilt": optimal_tilt
        }),
        Command::ThetaStar { strike, maturity } => json!({
            "name": "theta-star", "strike": strike, "maturity": maturity
        }),
        Command::VarianceRatio { strike, maturity } => json!({
            "name": "variance-ratio", "strike": strike, "maturity": maturity
        }),
        Command::Table1 { rows } => json!({ "name": "table1", "rows": rows }),
        Command::Selftest => json!({ "name": "selftest" }),
    }
}

/// Resolved configuration echoed into every output. The worker count is
/// deliberately absent: results do not depend on it.
fn resolved_config(params: &ModelParams, common: &Common, cmd: &Command) -> Value {
    json!({
        "command": command_json(cmd),
        "model": serde_json::to_value(ModelParamsFile::from(params)).expect("plain data"),
        "seed": common.seed,
        "paths": common.paths,
        "steps": common.steps,
        "dt": common.dt,
        "no_timing": common.no_timing,
    })
}

pub fn config_digest(config: &Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Io(_) => EXIT_USAGE,
        Error::NotConverged(_) => EXIT_NOT_CONVERGED,
        _ => EXIT_MODEL,
    }
}

/// Executes a parsed command, writing its CSV to `--out` or stdout.
pub fn execute(cli: &Cli) -> Result<()> {
    let params = load_params(&cli.common, default_preset(&cli.command))?;
    let config = resolved_config(&params, &cli.common, &cli.command);
    let ctx = Context {
        params,
        common: cli.common.clone(),
        config,
    };
    let (mut csv, failure) = match &cli.command {
        Command::Laplace { theta, t } => (cmd_laplace(&ctx, theta, &t.0)?, None),
        Command::Lambda {
            theta,
            horizon,
            zero_rate,
        } => (cmd_lambda(&ctx, theta, *horizon, *zero_rate)?, None),
        Command::Rate { y, box_upper } => cmd_rate(&ctx, y, *box_upper)?,
        Command::SmileAsymptotic { grid } => (cmd_smile_asymptotic(&ctx, &grid.values()?)?, None),
        Command::SmileMc { grid, maturities } => {
            (cmd_smile_mc(&ctx, &grid.values()?, &maturities.0)?, None)
        }
        Command::Price {
            strike,
            maturity,
            kind,
            theta,
            optimal_tilt,
        } => (
            cmd_price(&ctx, *strike, *maturity, *kind, theta.as_ref(), *optimal_tilt)?,
            None,
        ),
        Command::ThetaStar { strike, maturity } => (cmd_theta_star(&ctx, *strike, *maturity)?, None),
        Command::VarianceRatio { strike, maturity } => {
            (cmd_variance_ratio(&ctx, *strike, *maturity)?, None)
        }
        Command::Table1 { rows } => (cmd_table1(&ctx, rows.as_deref())?, None),
        Command::Selftest => cmd_selftest(&ctx)?,
    };
    csv.header = vec![
        format!("wishart-ldp {}", env!("CARGO_PKG_VERSION")),
        format!("config: {}", ctx.config),
        format!("config-sha256: {}", config_digest(&ctx.config)),
    ];
    let text = csv.render();
    match &cli.common.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    failure.map_or(Ok(()), Err)
}

fn cmd_laplace(ctx: &Context, thetas: &[Vector], ts: &[f64]) -> Result<Csv> {
    let p = &ctx.params;
    let mut csv = Csv::new(cols(&[
        &indexed("theta", p.n),
        &names(&["t", "log_value", "finite"]),
    ]));
    for th in thetas {
        check_dim(p, &th.0)?;
        for &t in ts {
            if !(t >= 0.0) {
                return Err(Error::InvalidArgument(format!("horizon must be nonnegative, got {t}")));
            }
            let e = log_laplace_y(p, &th.0, t);
            let mut row = fmt_vec(&th.0);
            row.extend([fmt_f64(t), fmt_f64(e.log_value), e.finite.to_string()]);
            csv.push(row);
        }
    }
    Ok(csv)
}

fn cmd_lambda(ctx: &Context, thetas: &[Vector], horizon: f64, zero_rate: bool) -> Result<Csv> {
    let p = &ctx.params;
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let mut lam = LaplaceExponent::new(p, horizon);
    if zero_rate {
        lam.rate = 0.0;
    }
    let mut csv = Csv::new(cols(&[
        &indexed("theta", p.n),
        &names(&["value", "finite", "min_eig_phi"]),
    ]));
    for th in thetas {
        check_dim(p, &th.0)?;
        let v = lam.value(&th.0);
        let mut row = fmt_vec(&th.0);
        row.extend([
            fmt_f64(v.to_f64()),
            v.is_finite().to_string(),
            fmt_f64(p.in_domain(&th.0).min_eig_phi),
        ]);
        csv.push(row);
    }
    Ok(csv)
}

fn cmd_rate(ctx: &Context, ys: &[Vector], box_upper: Option<f64>) -> Result<(Csv, Option<Error>)> {
    let p = &ctx.params;
    let lam = LaplaceExponent::new(p, 1.0);
    let bounds = box_upper.map(|u| BoxBounds::upper_all(p.n, u));
    let mut csv = Csv::new(cols(&[
        &indexed("y", p.n),
        &names(&["value"]),
        &indexed("argmax", p.n),
        &names(&["converged"]),
    ]));
    let mut failure = None;
    for y in ys {
        check_dim(p, &y.0)?;
        let r = lam.rate(&y.0, bounds.as_ref())?;
        if !r.converged {
            failure = Some(Error::NotConverged(format!("rate function at y = {:?}", y.0)));
        }
        let mut row = fmt_vec(&y.0);
        row.push(fmt_f64(r.value));
        row.extend(fmt_vec(&r.argmax_lambda));
        row.push(r.converged.to_string());
        csv.push(row);
    }
    Ok((csv, failure))
}

fn cmd_smile_asymptotic(ctx: &Context, ys: &[f64]) -> Result<Csv> {
    let p = &ctx.params;
    let rc = regime_constants(p)?;
    let mut csv = Csv::new(names(&["y", "regime", "L", "sigma_inf", "c_infinity", "error"]));
    for &y in ys {
        let c = smile::c_infinity(p, y).map(fmt_f64).unwrap_or_default();
        let row = match smile::smile_point(p, &rc, y) {
            Ok(sp) => vec![
                fmt_f64(y),
                sp.regime.as_str().to_string(),
                fmt_f64(sp.l),
                fmt_f64(sp.sigma_inf),
                c,
                String::new(),
            ],
            Err(e) => vec![
                fmt_f64(y),
                String::new(),
                String::new(),
                String::new(),
                c,
                csv_text(&e.to_string()),
            ],
        };
        csv.push(row);
    }
    Ok(csv)
}

fn csv_text(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "'"))
}

/// Monte Carlo implied volatility of the basket at log-strike `k = yT`,
/// read off the out-of-the-money option.
fn cmd_smile_mc(ctx: &Context, ys: &[f64], maturities: &[f64]) -> Result<Csv> {
    let p = &ctx.params;
    let rc = regime_constants(p)?;
    let weights = p.weights();
    let mut csv = Csv::new(names(&[
        "y", "T", "kind", "mc_price", "stderr", "implied_vol", "sigma_inf", "error",
    ]));
    for &t in maturities {
        let cfg = ctx.path_config(t, SMILE_MC_DT, ctx.common.seed)?;
        let batch = simulate(p, &cfg, &MeasureSpec::Physical)?;
        let forward = (p.r * t).exp();
        let baskets: Vec<f64> = (0..batch.n_paths())
            .map(|i| {
                weights
                    .iter()
                    .zip(batch.y(i))
                    .map(|(w, y)| w * y.exp())
                    .sum::<f64>()
                    / forward
            })
            .collect();
        for &y in ys {
            let k = y * t;
            let is_call = k >= 0.0;
            let strike = k.exp();
            let payoffs: Vec<f64> = baskets
                .iter()
                .map(|&s| {
                    if is_call {
                        (s - strike).max(0.0)
                    } else {
                        (strike - s).max(0.0)
                    }
                })
                .collect();
            let s = control_variate(&payoffs, &baskets, 1.0);
            let sigma_inf = smile::smile_point(p, &rc, y).map(|sp| sp.sigma_inf);
            let iv = smile::bs_implied_vol(t, k, s.mean, is_call);
            let err = match (&iv, &sigma_inf) {
                (Err(e), _) | (_, Err(e)) => csv_text(&e.to_string()),
                _ => String::new(),
            };
            csv.push(vec![
                fmt_f64(y),
                fmt_f64(t),
                if is_call { "call" } else { "put" }.to_string(),
                fmt_f64(s.mean),
                fmt_f64(s.stderr),
                iv.map(fmt_f64).unwrap_or_default(),
                sigma_inf.map(fmt_f64).unwrap_or_default(),
                err,
            ]);
        }
    }
    Ok(csv)
}

fn payoff_for(p: &ModelParams, strike: f64, kind: Kind) -> Result<PayoffSpec> {
    let kind = match kind {
        Kind::Put => PayoffKind::BasketPut,
        Kind::Call => PayoffKind::BasketCall,
    };
    PayoffSpec::new(kind, strike, p.weights())
}

fn cmd_price(
    ctx: &Context,
    strike: f64,
    maturity: f64,
    kind: Kind,
    theta: Option<&Vector>,
    optimal: bool,
) -> Result<Csv> {
    let p = &ctx.params;
    let payoff = payoff_for(p, strike, kind)?;
    let tilt = match (theta, optimal) {
        (Some(t), _) => {
            check_dim(p, &t.0)?;
            Some(t.0.clone())
        }
        (None, true) => Some(impsamp::theta_star(p, maturity, &payoff)?.theta),
        (None, false) => None,
    };
    let cfg = ctx.path_config(maturity, TABLE1_DT, ctx.common.seed)?;
    let r = impsamp::price(p, &payoff, &cfg, tilt.as_deref())?;
    let mut columns = cols(&[
        &names(&["maturity", "strike", "kind", "measure"]),
        &indexed("theta", p.n),
        &names(&["price", "stderr", "variance", "n_paths"]),
    ]);
    if !ctx.common.no_timing {
        columns.push("time_seconds".into());
    }
    let mut csv = Csv::new(columns);
    let mut row = vec![
        fmt_f64(maturity),
        fmt_f64(strike),
        format!("{kind:?}").to_lowercase(),
        if tilt.is_some() { "tilted" } else { "physical" }.to_string(),
    ];
    row.extend(fmt_vec(&tilt.unwrap_or_else(|| vec![0.0; p.n])));
    row.extend([
        fmt_f64(r.estimate),
        fmt_f64(r.stderr),
        fmt_f64(r.variance),
        r.n_paths.to_string(),
    ]);
    if !ctx.common.no_timing {
        row.push(format!("{:.3}", r.wall_time));
    }
    csv.push(row);
    Ok(csv)
}

fn cmd_theta_star(ctx: &Context, strike: f64, maturity: f64) -> Result<Csv> {
    let p = &ctx.params;
    let payoff = payoff_for(p, strike, Kind::Put)?;
    let ts = impsamp::theta_star(p, maturity, &payoff)?;
    let mut csv = Csv::new(cols(&[
        &names(&["maturity", "strike"]),
        &indexed("theta", p.n),
        &names(&["objective", "converged"]),
    ]));
    let mut row = vec![fmt_f64(maturity), fmt_f64(strike)];
    row.extend(fmt_vec(&ts.theta));
    row.extend([fmt_f64(ts.objective), ts.converged.to_string()]);
    csv.push(row);
    Ok(csv)
}

fn table_columns(n: usize, timing: bool) -> Vec<String> {
    let mut c = cols(&[
        &names(&["maturity", "strike"]),
        &indexed("theta", n),
        &names(&[
            "price",
            "std_dev",
            "plain_price",
            "plain_std_dev",
            "var_ratio",
            "var_ratio_stderr",
        ]),
    ]);
    if timing {
        c.push("time_seconds".into());
    }
    c.push("status".into());
    c
}

fn table_row(ctx: &Context, maturity: f64, strike: f64) -> Vec<String> {
    let p = &ctx.params;
    let timing = !ctx.common.no_timing;
    let start = Instant::now();
    let outcome = (|| -> Result<(Vec<f64>, impsamp::VarianceRatio)> {
        let payoff = payoff_for(p, strike, Kind::Put)?;
        let ts = impsamp::theta_star(p, maturity, &payoff)?;
        let cfg = ctx.path_config(maturity, TABLE1_DT, ctx.common.seed)?;
        let vr = impsamp::variance_ratio(p, &payoff, &cfg, &ts.theta)?;
        Ok((ts.theta, vr))
    })();
    let mut row = vec![fmt_f64(maturity), fmt_f64(strike)];
    match outcome {
        Ok((theta, vr)) => {
            row.extend(fmt_vec(&theta));
            row.extend([
                fmt_f64(vr.tilted.estimate),
                fmt_f64(vr.tilted.stderr),
                fmt_f64(vr.plain.estimate),
                fmt_f64(vr.plain.stderr),
                fmt_f64(vr.ratio),
                fmt_f64(vr.ratio_stderr),
            ]);
            if timing {
                row.push(format!("{:.3}", start.elapsed().as_secs_f64()));
            }
            row.push("ok".into());
        }
        Err(e) => {
            row.extend(std::iter::repeat_n(String::new(), p.n + 6));
            if timing {
                row.push(format!("{:.3}", start.elapsed().as_secs_f64()));
            }
            row.push(csv_text(&format!("failed: {e}")));
        }
    }
    row
}

fn cmd_variance_ratio(ctx: &Context, strike: f64, maturity: f64) -> Result<Csv> {
    let mut csv = Csv::new(table_columns(ctx.params.n, !ctx.common.no_timing));
    csv.push(table_row(ctx, maturity, strike));
    Ok(csv)
}

fn parse_rows(spec: &str) -> Result<Vec<(f64, f64)>> {
    let rows = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (t, k) = pair
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("row {pair:?} is not T:K")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("{s:?}: {e}")))
            };
            Ok((parse(t)?, parse(k)?))
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no table rows given".into()));
    }
    Ok(rows)
}

fn cmd_table1(ctx: &Context, rows: Option<&str>) -> Result<Csv> {
    let rows = match rows {
        Some(spec) => parse_rows(spec)?,
        None => TABLE1_ROWS.to_vec(),
    };
    let mut csv = Csv::new(table_columns(ctx.params.n, !ctx.common.no_timing));
    for (t, k) in rows {
        csv.push(table_row(ctx, t, k));
    }
    Ok(csv)
}

/// Cheap deterministic checks of the model identities for the loaded parameters.
fn cmd_selftest(ctx: &Context) -> Result<(Csv, Option<Error>)> {
    let p = &ctx.params;
    let n = p.n;
    let mut csv = Csv::new(names(&["check", "passed", "detail"]));
    let mut all = true;
    let mut record = |name: &str, ok: bool, detail: String| {
        all &= ok;
        csv.push(vec![name.to_string(), ok.to_string(), csv_text(&detail)]);
    };

    let mut worst: f64 = 0.0;
    for t in [0.1, 1.0, 10.0, 100.0] {
        worst = worst.max(log_laplace_y(p, &vec![0.0; n], t).log_value.abs());
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let v = log_laplace_y(p, &e, t).log_value;
            worst = worst.max((v - p.r * t - p.y0[j]).abs());
        }
    }
    record("laplace_normalization", worst <= 1e-9, format!("max error {worst:e}"));

    let lam = LaplaceExponent::smile(p);
    let rc = regime_constants(p);
    match &rc {
        Ok(rc) => {
            let sym = (0..n)
                .map(|j| (rc.x_star[j] + rc.x_tilde_star[j]).abs())
                .fold(0.0, f64::max);
            let order = rc.beta_star < 0.0
                && 0.0 < rc.beta_hat_star
                && rc.beta_hat_star <= rc.beta_tilde_star;
            record(
                "regime_constants",
                sym <= 1e-10 && order,
                format!(
                    "beta*={:e} beta^*={:e} beta~*={:e} |x*+x~*|={sym:e}",
                    rc.beta_star, rc.beta_hat_star, rc.beta_tilde_star
                ),
            );
        }
        Err(e) => record("regime_constants", false, e.to_string()),
    }

    let h = 1e-5;
    let probe: Vec<f64> = (0..n).map(|i| 0.05 * (i as f64 + 1.0)).collect();
    let grad_ok = match lam.gradient(&probe) {
        Ok(g) => (0..n).all(|j| {
            let mut up = probe.clone();
            let mut dn = probe.clone();
            up[j] += h;
            dn[j] -= h;
            match (lam.value(&up).finite(), lam.value(&dn).finite()) {
                (Some(a), Some(b)) => ((a - b) / (2.0 * h) - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-2),
                _ => false,
            }
        }),
        Err(_) => false,
    };
    record("gradient_finite_difference", grad_ok, format!("theta={probe:?}"));

    if let Ok(rc) = &rc {
        let lo = 2.0 * rc.beta_star;
        let hi = rc.beta_tilde_star + 0.2;
        let mut max_err: f64 = 0.0;
        let mut signs_ok = true;
        let mut failures = 0;
        for i in 0..25 {
            let y = lo + (hi - lo) * (i as f64 + 0.37) / 25.0;
            match smile::smile_point(p, rc, y) {
                Ok(sp) => {
                    let s = sp.sigma_inf;
                    max_err = max_err.max((0.5 * (s / 2.0 - y / s).powi(2) - sp.l).abs());
                    let half = s * s / 2.0;
                    signs_ok &= match sp.regime {
                        Regime::Put => y <= -half,
                        Regime::Call => y >= half,
                        Regime::CoveredCall => -half < y && y < half,
                        Regime::Plateau => true,
                    };
                }
                Err(_) => failures += 1,
            }
        }
        record(
            "smile_identity",
            max_err <= 1e-8 && signs_ok && failures == 0,
            format!("max error {max_err:e}, sign table {signs_ok}, failures {failures}"),
        );
    }
    let failure = (!all).then(|| Error::InvalidModel("self-test failed".into()));
    Ok((csv, failure))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_vectors_and_grids() {
        assert_eq!("0.3, -0.2".parse::<Vector>().unwrap(), Vector(vec![0.3, -0.2]));
        assert!("0.3,x".parse::<Vector>().is_err());
        assert_eq!("0:1:3".parse::<Grid>().unwrap(), Grid(vec![0.0, 0.5, 1.0]));
        assert_eq!("0:1:0".parse::<Grid>().unwrap(), Grid(vec![]));
        assert!("0:1".parse::<Grid>().is_err());
        assert_eq!(parse_rows("0.5:1.0, 0.25:1").unwrap(), vec![(0.5, 1.0), (0.25, 1.0)]);
        assert!(parse_rows("").is_err());
    }

    #[test]
    fn float_format_is_lossless() {
        for x in [0.1, -1.0 / 3.0, 2.6201e-2, 1e-300] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["wishart-ldp", "no-such-command"]), EXIT_USAGE);
        assert_eq!(run(["wishart-ldp", "smile-asymptotic"]), EXIT_USAGE);
        assert_eq!(run(["wishart-ldp", "smile-asymptotic", "--y-grid", "0:1:0"]), EXIT_USAGE);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::NotConverged("x".into())), EXIT_NOT_CONVERGED);
        assert_eq!(exit_code(&Error::OutOfDomain { min_eig_phi: -1.0 }), EXIT_MODEL);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), EXIT_USAGE);
    }
}
