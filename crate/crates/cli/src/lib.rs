//! Command-line front end: experiment settings in, CSV/JSON artifacts out.
//!
//! Settings resolve as flag > `--config` file > `SUBSPACE_UQ_SEED` (seed only) > default.
//! Numbers are written with C `%.12g` formatting, UTF-8, LF line endings.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use subspace_uq::bias::{inflate_singular_value, shrink_singular_values};
use subspace_uq::harness::{bias_table, coverage_table, run_experiment, wishart_frobenius_mc};
use subspace_uq::moments::{identity_checks, wishart_frobenius_moment};
use subspace_uq::{BiasOrder, Dims, ExperimentConfig, ExperimentKind, LambdaKind, LambdaProfile};

pub const SEED_ENV: &str = "SUBSPACE_UQ_SEED";
/// Largest `d1 + d2` accepted by `series-check`.
pub const MAX_SERIES_DIM: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Failure(_) | Self::Io(_) => 1,
        }
    }
}

impl From<subspace_uq::Error> for CliError {
    fn from(e: subspace_uq::Error) -> Self {
        match e {
            subspace_uq::Error::InvalidArgument(_) => Self::Usage(e.to_string()),
            other => Self::Failure(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Parser)]
#[command(
    name = "subspace-uq",
    version,
    about = "Error quantification for empirical singular subspaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bias ladder B_1..B_K, B_inf against the Monte-Carlo mean of dist^2.
    BiasTable {
        #[command(flatten)]
        common: CommonArgs,
        /// Orders, e.g. `1..4` or `1,3,inf`. `inf` is always added.
        #[arg(long)]
        orders: Option<String>,
    },
    /// Histogram and KS distance of the normalized statistic.
    Clt {
        #[command(flatten)]
        common: CommonArgs,
        /// true | empirical | shrunk
        #[arg(long)]
        estimator: Option<String>,
        /// Bias order, a positive integer or `inf`.
        #[arg(long)]
        order: Option<String>,
    },
    /// Truncation error of the perturbation series against a dense eigensolver.
    SeriesCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Noise is rescaled so that ||Z|| / lambda_r equals this.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        max_order: Option<usize>,
    },
    /// Empirical coverage of the confidence region.
    Coverage {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated nominal levels.
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long)]
        estimator: Option<String>,
        /// Bias order used by the region; defaults to ceil(ln max(d1, d2)).
        #[arg(long)]
        order: Option<String>,
    },
    /// Exact identities, shrinkage round-trip and a moment smoke test.
    Selftest {
        #[arg(long, default_value_t = 5000)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub d1: Option<usize>,
    #[arg(long)]
    pub d2: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Base singular value, or a `start:stop:step` grid for bias-table.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub orientation_seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// JSON settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LambdaValue {
    Number(f64),
    Text(String),
}

/// Settings file schema. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub d1: Option<usize>,
    pub d2: Option<usize>,
    pub r: Option<usize>,
    pub lambda: Option<LambdaValue>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub orientation_seed: Option<u64>,
    pub workers: Option<usize>,
    pub orders: Option<String>,
    pub order: Option<String>,
    pub estimator: Option<String>,
    pub alphas: Option<Vec<f64>>,
    pub ratio: Option<f64>,
    pub max_order: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

struct Defaults {
    d1: usize,
    d2: usize,
    r: usize,
    lambda: &'static str,
    reps: usize,
}

const PIPELINE_DEFAULTS: Defaults = Defaults {
    d1: 100,
    d2: 100,
    r: 6,
    lambda: "35",
    reps: 500,
};

const SERIES_DEFAULTS: Defaults = Defaults {
    d1: 20,
    d2: 20,
    r: 3,
    lambda: "2",
    reps: 20,
};

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Flags merged over the settings file.
struct Resolved {
    file: FileConfig,
    dims: Dims,
    lambda: String,
    reps: usize,
    seed: u64,
    orientation_seed: u64,
    workers: Option<usize>,
    out: PathBuf,
}

fn resolve(common: &CommonArgs, defaults: &Defaults) -> CliResult<Resolved> {
    let file = match &common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let d1 = common.d1.or(file.d1).unwrap_or(defaults.d1);
    let d2 = common.d2.or(file.d2).unwrap_or(defaults.d2);
    let r = common.r.or(file.r).unwrap_or(defaults.r);
    let dims = Dims::new(d1, d2, r)?;
    let lambda = match (&common.lambda, &file.lambda) {
        (Some(s), _) => s.clone(),
        (None, Some(LambdaValue::Number(x))) => x.to_string(),
        (None, Some(LambdaValue::Text(s))) => s.clone(),
        (None, None) => defaults.lambda.to_string(),
    };
    let seed = match common.seed.or(file.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(1),
    };
    let reps = common.reps.or(file.reps).unwrap_or(defaults.reps);
    if reps == 0 {
        return usage("--reps must be at least 1");
    }
    let workers = common.workers.or(file.workers);
    if workers == Some(0) {
        return usage("--workers must be at least 1");
    }
    Ok(Resolved {
        dims,
        lambda,
        reps,
        seed,
        orientation_seed: common.orientation_seed.or(file.orientation_seed).unwrap_or(0),
        workers,
        out: common.out.clone(),
        file,
    })
}

impl Resolved {
    fn config(&self, kind: ExperimentKind, base: f64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(kind, self.dims, LambdaProfile::Geometric(base));
        c.replicates = self.reps;
        c.seed = self.seed;
        c.orientation_seed = self.orientation_seed;
        c.workers = self.workers;
        c
    }

    fn single_lambda(&self) -> CliResult<f64> {
        match parse_grid(&self.lambda)?.as_slice() {
            [x] => Ok(*x),
            _ => usage(format!("expected a single --lambda value, got `{}`", self.lambda)),
        }
    }

    fn estimator(&self, flag: &Option<String>) -> CliResult<LambdaKind> {
        match flag.as_ref().or(self.file.estimator.as_ref()) {
            Some(s) => Ok(s.parse()?),
            None => Ok(LambdaKind::True),
        }
    }

    fn order(&self, flag: &Option<String>, default: BiasOrder) -> CliResult<BiasOrder> {
        match flag.as_ref().or(self.file.order.as_ref()) {
            Some(s) => Ok(s.parse()?),
            None => Ok(default),
        }
    }
}

/// `start:stop:step` (inclusive) or a single number.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let num = |t: &str| -> CliResult<f64> {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| CliError::Usage(format!("`{t}` is not a finite number")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [x] => Ok(vec![num(x)?]),
        [a, b, c] => {
            let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
            if step.is_nan() || step <= 0.0 || stop < start {
                return usage(format!("grid `{s}` needs step > 0 and stop >= start"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
            if n > 100_000 {
                return usage(format!("grid `{s}` has too many points"));
            }
            Ok((0..n).map(|i| start + i as f64 * step).collect())
        }
        _ => usage(format!("`{s}` is neither a number nor start:stop:step")),
    }
}

/// `1..4`, `1,3,inf` or combinations such as `1..3,inf`.
pub fn parse_orders(s: &str) -> CliResult<Vec<BiasOrder>> {
    let mut out = vec![];
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (usize, usize) = match (a.parse(), b.parse()) {
                (Ok(a), Ok(b)) if 1 <= a && a <= b => (a, b),
                _ => return usage(format!("bad order range `{part}`")),
            };
            out.extend((a..=b).map(BiasOrder::Finite));
        } else {
            out.push(part.parse()?);
        }
    }
    let mut dedup = vec![];
    for o in out {
        if !dedup.contains(&o) {
            dedup.push(o);
        }
    }
    Ok(dedup)
}

pub fn parse_alphas(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|a| *a > 0.0 && *a < 1.0)
                .ok_or_else(|| CliError::Usage(format!("alpha `{t}` must lie in (0, 1)")))
        })
        .collect()
}

/// C `printf("%.12g")`.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..12).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs())
    } else {
        trim_fraction(&format!("{x:.*}", (11 - exp) as usize)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn json_number(x: f64) -> String {
    if x.is_finite() {
        fmt_g(x)
    } else {
        "null".into()
    }
}

fn write_output(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

pub fn cmd_bias_table(common: &CommonArgs, orders: &Option<String>) -> CliResult<PathBuf> {
    let res = resolve(common, &PIPELINE_DEFAULTS)?;
    let lambdas = parse_grid(&res.lambda)?;
    let orders = parse_orders(orders.as_deref().or(res.file.orders.as_deref()).unwrap_or("1..4"))?;
    let mut config = res.config(ExperimentKind::BiasApprox, lambdas[0]);
    config.orders = orders;
    let rows = bias_table(&config, &lambdas)?;
    let mut csv = String::from("lambda,order,B,mc_mean,mc_se,signed_err\n");
    for row in rows {
        csv += &format!(
            "{},{},{},{},{},{}\n",
            fmt_g(row.lambda),
            row.order,
            fmt_g(row.bias),
            fmt_g(row.mc_mean),
            fmt_g(row.mc_se),
            fmt_g(row.signed_err)
        );
    }
    write_output(&res.out, "bias_table.csv", &csv)
}

pub fn cmd_clt(common: &CommonArgs, estimator: &Option<String>, order: &Option<String>) -> CliResult<Vec<PathBuf>> {
    let res = resolve(common, &PIPELINE_DEFAULTS)?;
    let mut config = res.config(ExperimentKind::CltHistogram, res.single_lambda()?);
    config.estimator = res.estimator(estimator)?;
    config.orders = vec![res.order(order, BiasOrder::Finite(1))?];
    config.alphas = vec![];
    let summary = run_experiment(&config)?;
    let stats = &summary.orders[0];
    let mut csv = String::from("bin_left,bin_right,density\n");
    for (l, r, d) in stats.histogram.densities() {
        csv += &format!("{},{},{}\n", fmt_g(l), fmt_g(r), fmt_g(d));
    }
    let json = format!(
        "{{\"ks\":{},\"mean\":{},\"var\":{},\"reps\":{},\"shrink_failures\":{}}}\n",
        stats.ks.map_or("null".into(), json_number),
        json_number(stats.statistic.mean),
        json_number(stats.statistic.variance()),
        summary.completed,
        summary.shrink_failures
    );
    Ok(vec![
        write_output(&res.out, "clt_hist.csv", &csv)?,
        write_output(&res.out, "clt_summary.json", &json)?,
    ])
}

pub fn cmd_series_check(common: &CommonArgs, ratio: Option<f64>, max_order: Option<usize>) -> CliResult<PathBuf> {
    let res = resolve(common, &SERIES_DEFAULTS)?;
    if res.dims.n() > MAX_SERIES_DIM {
        return usage(format!(
            "series-check needs d1 + d2 <= {MAX_SERIES_DIM}, got {}",
            res.dims.n()
        ));
    }
    let mut config = res.config(ExperimentKind::SeriesCheck, res.single_lambda()?);
    config.series_ratio = ratio.or(res.file.ratio).unwrap_or(0.1);
    config.series_max_order = max_order.or(res.file.max_order).unwrap_or(8);
    let summary = run_experiment(&config)?;
    let mut csv = String::from("K,frob_err,tail_bound\n");
    let mut violations = vec![];
    for row in &summary.series_decay {
        csv += &format!("{},{},{}\n", row.order, fmt_g(row.frob_err), fmt_g(row.tail_bound));
        if row.frob_err > row.tail_bound {
            violations.push(row.order);
        }
    }
    let path = write_output(&res.out, "series_decay.csv", &csv)?;
    if !violations.is_empty() {
        return Err(CliError::Failure(format!(
            "truncation error exceeds the tail bound at K = {violations:?}"
        )));
    }
    Ok(path)
}

pub fn cmd_coverage(
    common: &CommonArgs,
    alphas: &Option<String>,
    estimator: &Option<String>,
    order: &Option<String>,
) -> CliResult<PathBuf> {
    let res = resolve(common, &PIPELINE_DEFAULTS)?;
    let alphas = match (alphas, &res.file.alphas) {
        (Some(s), _) => parse_alphas(s)?,
        (None, Some(v)) => v.clone(),
        (None, None) => vec![0.05, 0.1],
    };
    let mut config = res.config(ExperimentKind::Coverage, res.single_lambda()?);
    config.estimator = res.estimator(estimator)?;
    config.region_order = res.order(order, BiasOrder::Finite(res.dims.default_order()))?;
    let rows = coverage_table(&config, &alphas)?;
    let mut csv = String::from("alpha,coverage,se,reps\n");
    for row in rows {
        csv += &format!(
            "{},{},{},{}\n",
            fmt_g(row.alpha),
            fmt_g(row.coverage),
            fmt_g(row.se),
            row.replicates
        );
    }
    write_output(&res.out, "coverage.csv", &csv)
}

/// Prints one line per check; fails on the first broken exact identity or
/// on any statistical check outside its tolerance.
pub fn cmd_selftest(reps: usize, seed: Option<u64>, workers: Option<usize>) -> CliResult<()> {
    if reps < 2 {
        return usage("--reps must be at least 2");
    }
    let seed = match seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(1),
    };
    let mut failures = vec![];

    let report = identity_checks(25).map_err(|e| CliError::Failure(format!("identity check: {e}")))?;
    println!("identities k0=1..{}: exact", report.rows.len());

    let dims = Dims::new(100, 200, 1)?;
    let edge = ((dims.d1() * dims.d2()) as f64).powf(0.25);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let lambda = edge * (1.01 + i as f64 * 0.5);
        let est = shrink_singular_values(dims, &[inflate_singular_value(dims, lambda)]);
        if !est.valid[0] {
            failures.push(format!("shrinkage flagged lambda = {lambda} as invalid"));
        }
        worst = worst.max((est.values[0] - lambda).abs() / lambda);
    }
    let below = shrink_singular_values(dims, &[0.5 * (dims.d1() as f64).sqrt()]);
    let ok = worst < 1e-9 && !below.valid[0] && below.values[0].is_finite();
    println!("shrinkage round-trip: max relative error {} {}", fmt_g(worst), pass(ok));
    if !ok {
        failures.push("shrinkage round-trip".into());
    }

    let lambda = [3.0, 2.0, 1.0];
    for (j1, j2) in [(1, 1), (1, 2)] {
        let exact = wishart_frobenius_moment(&lambda, 50, j1, j2)?;
        let mc = wishart_frobenius_mc(&lambda, 50, j1, j2, reps, seed, workers)?;
        let z = (mc.mean - exact) / mc.se();
        let ok = z.abs() <= 4.0;
        println!(
            "wishart moment (j1={j1}, j2={j2}): closed {} mc {} se {} z {} {}",
            fmt_g(exact),
            fmt_g(mc.mean),
            fmt_g(mc.se()),
            fmt_g(z),
            pass(ok)
        );
        if !ok {
            failures.push(format!("wishart moment (j1={j1}, j2={j2})"));
        }
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("selftest failed: {}", failures.join("; "))))
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::BiasTable { common, orders } => report(&[cmd_bias_table(&common, &orders)?]),
        Command::Clt {
            common,
            estimator,
            order,
        } => report(&cmd_clt(&common, &estimator, &order)?),
        Command::SeriesCheck {
            common,
            ratio,
            max_order,
        } => report(&[cmd_series_check(&common, ratio, max_order)?]),
        Command::Coverage {
            common,
            alphas,
            estimator,
            order,
        } => report(&[cmd_coverage(&common, &alphas, &estimator, &order)?]),
        Command::Selftest { reps, seed, workers } => cmd_selftest(reps, seed, workers),
    }
}

fn report(paths: &[PathBuf]) -> CliResult<()> {
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}
