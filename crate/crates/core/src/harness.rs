//! Monte-Carlo harness: replicate execution, deterministic aggregation,
//! histograms, KS distance and coverage tables.
//!
//! Replicate `i` draws its noise from stream `i` of the configured seed and
//! is evaluated independently; results are collected in replicate order and
//! folded sequentially, so every summary is bit-identical for any worker count.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{bias, shrink_singular_values, BiasOrder, LambdaKind, SingularValueEstimate};
use crate::dilation::{dilate_rect, SymmetricDilation};
use crate::error::{invalid, Error, Result};
use crate::inference::{clt_statistic, confidence_region_contains, projection_distance2, ConfidenceRegionSpec};
use crate::model::{
    geometric_profile, make_model, observe, sample_noise, spectral_norm, top_r_svd, Dims, LowRankModel,
};
use crate::moments::{mp_moment_beta, wishart_frobenius_moment};
use crate::normal::std_normal_cdf;
use crate::rng::{NoiseSpec, NormalStream};
use crate::series::{geometric_tail, series_apply_unchecked, MAX_EVALUATION_ORDER};

/// Fraction of failed replicates above which an experiment errors out.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BiasApprox,
    CltHistogram,
    Coverage,
    SeriesCheck,
    MomentCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LambdaProfile {
    /// `λᵢ = 2^{r-i} · base`
    Geometric(f64),
    Explicit(Vec<f64>),
}

impl LambdaProfile {
    pub fn values(&self, r: usize) -> Result<Vec<f64>> {
        match self {
            Self::Geometric(base) => Ok(geometric_profile(r, *base)),
            Self::Explicit(v) if v.len() == r => Ok(v.clone()),
            Self::Explicit(v) => invalid(format!("expected {r} singular values, got {}", v.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dims: Dims,
    pub lambda: LambdaProfile,
    pub replicates: usize,
    pub seed: u64,
    pub orientation_seed: u64,
    /// Singular values used for `B` and `σ`.
    pub estimator: LambdaKind,
    /// Orders at which the statistic is evaluated.
    pub orders: Vec<BiasOrder>,
    /// Nominal levels for coverage experiments.
    pub alphas: Vec<f64>,
    /// Bias order used by the confidence region.
    pub region_order: BiasOrder,
    /// Target `‖Z‖ / λ_r` for series checks; the noise is rescaled to hit it.
    /// Values at or above `1/2` fail the SNR gate.
    pub series_ratio: f64,
    pub series_max_order: usize,
    /// `None` runs on the global rayon pool.
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, dims: Dims, lambda: LambdaProfile) -> Self {
        Self {
            kind,
            dims,
            lambda,
            replicates: 500,
            seed: 1,
            orientation_seed: 0,
            estimator: LambdaKind::True,
            orders: vec![BiasOrder::Finite(1)],
            alphas: vec![0.05],
            region_order: BiasOrder::Finite(dims.default_order()),
            series_ratio: 0.1,
            series_max_order: 8,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return invalid("replicate count must be at least 1");
        }
        let lambda = self.lambda.values(self.dims.r())?;
        if lambda.iter().any(|&l| l.is_nan() || l <= 0.0) || lambda.windows(2).any(|w| w[1] > w[0]) {
            return invalid("singular values must be positive and non-increasing");
        }
        if self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return invalid("alphas must lie in (0, 1)");
        }
        if self.orders.is_empty() {
            return invalid("at least one bias order is required");
        }
        if self.workers == Some(0) {
            return invalid("worker count must be positive");
        }
        if self.kind == ExperimentKind::SeriesCheck {
            if !(self.series_ratio > 0.0 && self.series_ratio.is_finite()) {
                return invalid("series ratio must be positive");
            }
            if !(1..=MAX_EVALUATION_ORDER).contains(&self.series_max_order) {
                return invalid(format!("series order must lie in 1..={MAX_EVALUATION_ORDER}"));
            }
        }
        Ok(())
    }
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamingMoments {
    pub count: usize,
    pub mean: f64,
    m2: f64,
}

impl StreamingMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for StreamingMoments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Self::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Fixed-edge histogram on `[−5, 5]` with width `0.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub const LOW: f64 = -5.0;
    pub const HIGH: f64 = 5.0;
    pub const BINS: usize = 100;
    pub const WIDTH: f64 = 0.1;

    pub fn new() -> Self {
        Self {
            counts: vec![0; Self::BINS],
            below: 0,
            above: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        if x < Self::LOW {
            self.below += 1;
        } else if x >= Self::HIGH {
            self.above += 1;
        } else {
            let idx = (((x - Self::LOW) * 10.0).floor() as usize).min(Self::BINS - 1);
            self.counts[idx] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    pub fn edges(i: usize) -> (f64, f64) {
        ((i as f64 - 50.0) / 10.0, (i as f64 - 49.0) / 10.0)
    }

    /// `(left, right, density)` per bin; density integrates to the in-range mass.
    pub fn densities(&self) -> Vec<(f64, f64, f64)> {
        let total = self.total().max(1) as f64;
        (0..Self::BINS)
            .map(|i| {
                let (l, r) = Self::edges(i);
                (l, r, self.counts[i] as f64 / (total * Self::WIDTH))
            })
            .collect()
    }

    /// In-range mass plus the fraction outside; equals one up to rounding.
    pub fn total_probability(&self) -> f64 {
        let total = self.total().max(1) as f64;
        let inside: f64 = self.densities().iter().map(|(l, r, d)| d * (r - l)).sum();
        inside + (self.below + self.above) as f64 / total
    }
}

impl Default for Histogram {
    fn default() -> Self {
        Self::new()
    }
}

/// `sup |F_n − Φ|` from the sorted-sample two-sided formula.
pub fn ks_distance(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return invalid("KS distance needs at least two samples");
    }
    if samples.iter().any(|x| x.is_nan()) {
        return invalid("KS distance got NaN samples");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let f = std_normal_cdf(x);
        let upper = (i + 1) as f64 / n - f;
        let lower = f - i as f64 / n;
        acc.max(upper).max(lower)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSummary {
    pub order: BiasOrder,
    /// `B` evaluated at the true singular values.
    pub bias_true: f64,
    pub statistic: StreamingMoments,
    pub histogram: Histogram,
    /// `None` with fewer than two samples.
    pub ks: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub alpha: f64,
    pub covered: usize,
    pub coverage: f64,
    /// `√(p̂(1−p̂)/n)`
    pub se: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDecayRow {
    pub order: usize,
    /// Largest `‖(Θ̂Θ̂ᵀ − ΘΘᵀ) − Σ_{k≤K} S_k‖_F` over replicates.
    pub frob_err: f64,
    /// `2r Σ_{k>K} (4‖X‖/λ_r)^k` at the configured ratio.
    pub tail_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheckRow {
    pub name: String,
    pub closed_form: f64,
    pub mc: StreamingMoments,
}

impl MomentCheckRow {
    /// `(MC mean − closed form) / SE`
    pub fn z_score(&self) -> f64 {
        (self.mc.mean - self.closed_form) / self.mc.se()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub replicates: usize,
    pub completed: usize,
    pub svd_failures: usize,
    /// Replicates where at least one shrunk singular value was flagged invalid.
    pub shrink_failures: usize,
    pub dist2: StreamingMoments,
    pub orders: Vec<OrderSummary>,
    pub coverage: Vec<CoverageRow>,
    pub series_decay: Vec<SeriesDecayRow>,
    pub moment_checks: Vec<MomentCheckRow>,
}

impl ReplicateSummary {
    fn empty(replicates: usize) -> Self {
        Self {
            replicates,
            completed: 0,
            svd_failures: 0,
            shrink_failures: 0,
            dist2: StreamingMoments::default(),
            orders: vec![],
            coverage: vec![],
            series_decay: vec![],
            moment_checks: vec![],
        }
    }

    pub fn order(&self, order: BiasOrder) -> Option<&OrderSummary> {
        self.orders.iter().find(|o| o.order == order)
    }
}

struct ReplicateRecord {
    dist2: f64,
    stats: Vec<f64>,
    covered: Vec<bool>,
    shrink_failed: bool,
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Evaluates `f(i)` for every replicate in parallel and returns the results in index order.
fn map_replicates<T: Send>(
    workers: Option<usize>,
    replicates: usize,
    f: impl Fn(u64) -> T + Sync + Send,
) -> Result<Vec<T>> {
    with_pool(workers, || (0..replicates as u64).into_par_iter().map(&f).collect())
}

fn lambda_estimate(kind: LambdaKind, model: &LowRankModel, lambda_hat: &[f64]) -> SingularValueEstimate {
    match kind {
        LambdaKind::True => SingularValueEstimate::exact(LambdaKind::True, model.lambda.clone()),
        LambdaKind::Empirical => SingularValueEstimate::exact(LambdaKind::Empirical, lambda_hat.to_vec()),
        LambdaKind::Shrunk => shrink_singular_values(model.dims, lambda_hat),
    }
}

fn run_replicate(config: &ExperimentConfig, model: &LowRankModel, index: u64) -> Result<ReplicateRecord> {
    let dims = config.dims;
    let z = sample_noise(dims, NoiseSpec::new(config.seed, index));
    let obs = observe(model, &z)?;
    let svd = top_r_svd(&obs, dims.r())?;
    let dist2 = projection_distance2(&svd.u_hat, &svd.v_hat, &model.u, &model.v)?;
    let est = lambda_estimate(config.estimator, model, &svd.lambda_hat);
    let stats = config
        .orders
        .iter()
        .map(|&o| clt_statistic(dist2, dims, &est, o).map(|s| s.value))
        .collect::<Result<Vec<_>>>()?;
    let covered = config
        .alphas
        .iter()
        .map(|&alpha| {
            let spec = ConfidenceRegionSpec::new(alpha, config.region_order)?;
            confidence_region_contains((&model.u, &model.v), (&svd.u_hat, &svd.v_hat), dims, &est, &spec)
                .map(|m| m.contains)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateRecord {
        dist2,
        stats,
        covered,
        shrink_failed: !est.all_valid(),
    })
}

fn run_pipeline(config: &ExperimentConfig) -> Result<ReplicateSummary> {
    let lambda = config.lambda.values(config.dims.r())?;
    let model = make_model(config.dims, &lambda, config.orientation_seed)?;
    let records = map_replicates(config.workers, config.replicates, |i| run_replicate(config, &model, i))?;

    let mut summary = ReplicateSummary::empty(config.replicates);
    let mut stats: Vec<Vec<f64>> = vec![Vec::with_capacity(config.replicates); config.orders.len()];
    let mut covered = vec![0usize; config.alphas.len()];
    for rec in records {
        let rec = match rec {
            Ok(rec) => rec,
            Err(Error::NumericalFailure(_)) => {
                summary.svd_failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        summary.completed += 1;
        summary.dist2.push(rec.dist2);
        summary.shrink_failures += rec.shrink_failed as usize;
        for (dst, v) in stats.iter_mut().zip(rec.stats) {
            dst.push(v);
        }
        for (c, hit) in covered.iter_mut().zip(rec.covered) {
            *c += hit as usize;
        }
    }
    if summary.svd_failures as f64 > MAX_FAILURE_FRACTION * config.replicates as f64 {
        return Err(Error::TooManyFailures {
            failed: summary.svd_failures,
            total: config.replicates,
        });
    }

    for (&order, values) in config.orders.iter().zip(&stats) {
        let mut histogram = Histogram::new();
        values.iter().for_each(|&v| histogram.push(v));
        summary.orders.push(OrderSummary {
            order,
            bias_true: bias(config.dims, &lambda, order)?,
            statistic: values.iter().copied().collect(),
            histogram,
            ks: if values.len() >= 2 {
                Some(ks_distance(values)?)
            } else {
                None
            },
        });
    }
    let n = summary.completed;
    summary.coverage = config
        .alphas
        .iter()
        .zip(covered)
        .map(|(&alpha, c)| {
            let p = if n == 0 { 0.0 } else { c as f64 / n as f64 };
            CoverageRow {
                alpha,
                covered: c,
                coverage: p,
                se: if n == 0 { 0.0 } else { (p * (1.0 - p) / n as f64).sqrt() },
                replicates: n,
            }
        })
        .collect();
    Ok(summary)
}

/// `Θ̂Θ̂ᵀ − ΘΘᵀ` from a dense symmetric eigendecomposition of `A + X`.
pub fn eigen_projector_delta(dil: &SymmetricDilation, z: &DMatrix<f64>) -> DMatrix<f64> {
    let a_hat = dil.dense() + dilate_rect(z);
    let eig = a_hat.symmetric_eigen();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    let n = dil.dims.n();
    let mut p = DMatrix::zeros(n, n);
    for &i in &idx[..2 * dil.dims.r()] {
        let c = eig.eigenvectors.column(i);
        p += c * c.transpose();
    }
    let theta = dil.theta();
    p - &theta * theta.transpose()
}

/// Truncation errors `[err(1), …, err(K)]` of the series against the eigen oracle
/// for one noise draw rescaled to `‖Z‖ = ratio · λ_r`.
pub fn series_errors(model: &LowRankModel, seed: u64, stream: u64, ratio: f64, k_max: usize) -> Result<Vec<f64>> {
    let mut z = sample_noise(model.dims, NoiseSpec::new(seed, stream));
    z *= ratio * model.lambda_r() / spectral_norm(&z)?;
    let dil = SymmetricDilation::from_model(model);
    crate::series::check_snr(&dil, &z)?;
    let oracle = eigen_projector_delta(&dil, &z);
    let n = model.dims.n();
    let terms = series_apply_unchecked(&dil, &z, k_max, &DMatrix::identity(n, n));
    let mut partial = DMatrix::zeros(n, n);
    Ok(terms
        .iter()
        .map(|t| {
            partial += t;
            (&oracle - &partial).norm()
        })
        .collect())
}

fn run_series_check(config: &ExperimentConfig) -> Result<ReplicateSummary> {
    let lambda = config.lambda.values(config.dims.r())?;
    let model = make_model(config.dims, &lambda, config.orientation_seed)?;
    let k_max = config.series_max_order;
    let errs = map_replicates(config.workers, config.replicates, |i| {
        series_errors(&model, config.seed, i, config.series_ratio, k_max)
    })?;
    let mut worst = vec![0.0f64; k_max];
    let mut summary = ReplicateSummary::empty(config.replicates);
    for e in errs {
        let e = e?;
        summary.completed += 1;
        for (w, v) in worst.iter_mut().zip(e) {
            *w = w.max(v);
        }
    }
    let q = 4.0 * config.series_ratio;
    let r = config.dims.r() as f64;
    summary.series_decay = worst
        .into_iter()
        .enumerate()
        .map(|(i, frob_err)| SeriesDecayRow {
            order: i + 1,
            frob_err,
            tail_bound: 2.0 * r * geometric_tail(q, i + 1),
        })
        .collect();
    Ok(summary)
}

/// Monte-Carlo estimate of `E‖Λ^{-j₁} Z Zᵀ Λ^{-j₂}‖_F²` for `Z ∈ R^{r×d}`.
pub fn wishart_frobenius_mc(
    lambda: &[f64],
    d: usize,
    j1: usize,
    j2: usize,
    replicates: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<StreamingMoments> {
    let r = lambda.len();
    let w1: Vec<f64> = lambda.iter().map(|l| l.powi(-(j1 as i32))).collect();
    let w2: Vec<f64> = lambda.iter().map(|l| l.powi(-(j2 as i32))).collect();
    let values = map_replicates(workers, replicates, |i| {
        let mut stream = NormalStream::new(seed, i);
        let mut z = DMatrix::zeros(r, d);
        stream.fill_normal(z.as_mut_slice());
        let gram = &z * z.transpose();
        let mut acc = 0.0;
        for a in 0..r {
            for b in 0..r {
                acc += (w1[a] * gram[(a, b)] * w2[b]).powi(2);
            }
        }
        acc
    })?;
    Ok(values.into_iter().collect())
}

/// Monte-Carlo estimate of `E tr((GGᵀ)^{t-1})` for `G ∈ R^{d1m × (d2m+1)}`.
pub fn trace_moment_mc(
    t: usize,
    d1m: usize,
    d2m: usize,
    replicates: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<StreamingMoments> {
    if t < 2 || d1m == 0 {
        return invalid("need t >= 2 and d1m >= 1");
    }
    let values = map_replicates(workers, replicates, |i| {
        let mut stream = NormalStream::new(seed, i);
        let mut g = DMatrix::zeros(d1m, d2m + 1);
        stream.fill_normal(g.as_mut_slice());
        let w = &g * g.transpose();
        let mut power = w.clone();
        for _ in 2..t {
            power = &power * &w;
        }
        power.trace()
    })?;
    Ok(values.into_iter().collect())
}

fn run_moment_check(config: &ExperimentConfig) -> Result<ReplicateSummary> {
    let lambda = config.lambda.values(config.dims.r())?;
    let d = config.dims.d2();
    let mut summary = ReplicateSummary::empty(config.replicates);
    for (j1, j2) in [(1, 1), (1, 2)] {
        summary.moment_checks.push(MomentCheckRow {
            name: format!("wishart_frobenius(j1={j1},j2={j2},d={d})"),
            closed_form: wishart_frobenius_moment(&lambda, d, j1, j2)?,
            mc: wishart_frobenius_mc(&lambda, d, j1, j2, config.replicates, config.seed, config.workers)?,
        });
    }
    let (d1m, d2m) = (config.dims.d1m(), config.dims.d2m());
    if d1m > 0 {
        for t in 2..=4 {
            summary.moment_checks.push(MomentCheckRow {
                name: format!("mp_trace(t={t},d1m={d1m},d2m={d2m})"),
                closed_form: mp_moment_beta(t, d1m as u64, d2m as u64, 0.0)?,
                mc: trace_moment_mc(t, d1m, d2m, config.replicates, config.seed, config.workers)?,
            });
        }
    }
    summary.completed = config.replicates;
    Ok(summary)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ReplicateSummary> {
    config.validate()?;
    match config.kind {
        ExperimentKind::BiasApprox | ExperimentKind::CltHistogram | ExperimentKind::Coverage => run_pipeline(config),
        ExperimentKind::SeriesCheck => run_series_check(config),
        ExperimentKind::MomentCheck => run_moment_check(config),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub lambda: f64,
    pub order: BiasOrder,
    pub bias: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    /// `B − mc_mean`
    pub signed_err: f64,
}

/// One row per `(λ, order)` comparing `B_k` (true singular values) with the
/// Monte-Carlo mean of `dist²`. `B_∞` is always appended.
pub fn bias_table(config: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<BiasRow>> {
    if config.kind != ExperimentKind::BiasApprox {
        return invalid("bias_table needs a bias-approx experiment");
    }
    let mut orders: Vec<BiasOrder> = config.orders.clone();
    if !orders.contains(&BiasOrder::Infinite) {
        orders.push(BiasOrder::Infinite);
    }
    let mut rows = vec![];
    for &lam in lambdas {
        let cfg = ExperimentConfig {
            lambda: LambdaProfile::Geometric(lam),
            orders: orders.clone(),
            alphas: vec![],
            ..config.clone()
        };
        let summary = run_experiment(&cfg)?;
        let values = cfg.lambda.values(cfg.dims.r())?;
        for &order in &orders {
            let b = bias(cfg.dims, &values, order)?;
            rows.push(BiasRow {
                lambda: lam,
                order,
                bias: b,
                mc_mean: summary.dist2.mean,
                mc_se: summary.dist2.se(),
                signed_err: b - summary.dist2.mean,
            });
        }
    }
    Ok(rows)
}

/// Empirical coverage of the confidence region at each nominal level.
pub fn coverage_table(config: &ExperimentConfig, alphas: &[f64]) -> Result<Vec<CoverageRow>> {
    if config.kind != ExperimentKind::Coverage {
        return invalid("coverage_table needs a coverage experiment");
    }
    let cfg = ExperimentConfig {
        alphas: alphas.to_vec(),
        ..config.clone()
    };
    Ok(run_experiment(&cfg)?.coverage)
}
