//! Simulation scenarios, true-quantile oracle, error metrics and the grid runner.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::bicop::Criterion;
use crate::dvine::{DVineRegModel, FitConfig, Mode};
use crate::error::{Error, Result};
use crate::margins::ColumnKind;
use crate::npcop::JitterSpec;
use crate::special::norm_quantile;

/// Draws used for the Monte-Carlo estimate of `Var(g(X))`.
pub const VARIANCE_DRAWS: usize = 1_000_000;
const VARIANCE_SEED: u64 = 0x5eed_0001;

/// Counts square roots of negative arguments in `nonlinear5`.
static SQRT_GUARD_HITS: AtomicUsize = AtomicUsize::new(0);

pub fn sqrt_guard_hits() -> usize {
    SQRT_GUARD_HITS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GFunction {
    Linear3,
    Nonlinear3,
    Nonlinear5,
}

impl GFunction {
    pub fn arity(self) -> usize {
        match self {
            GFunction::Linear3 | GFunction::Nonlinear3 => 3,
            GFunction::Nonlinear5 => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GFunction::Linear3 => "linear3",
            GFunction::Nonlinear3 => "nonlinear3",
            GFunction::Nonlinear5 => "nonlinear5",
        }
    }

    fn eval_unchecked(self, x: &[f64]) -> f64 {
        match self {
            GFunction::Linear3 => 2.0 * x[0] - 3.0 * x[2],
            GFunction::Nonlinear3 => x[0] - 2.0 * (x[1] - 3.0).powi(2) + 4.0 * x[2].abs().sqrt(),
            GFunction::Nonlinear5 => {
                if x[0] < 0.0 {
                    SQRT_GUARD_HITS.fetch_add(1, Ordering::Relaxed);
                }
                3.0 * x[0].abs().sqrt() - x[2] * x[2] + (x[3] + 1.0).powi(3) - x[1] * x[4]
            }
        }
    }
}

impl FromStr for GFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear3" => Ok(GFunction::Linear3),
            "nonlinear3" => Ok(GFunction::Nonlinear3),
            "nonlinear5" => Ok(GFunction::Nonlinear5),
            other => Err(Error::InvalidSpec(format!("unknown g function '{other}'"))),
        }
    }
}

impl fmt::Display for GFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn g_eval(g: GFunction, x: &[f64]) -> Result<f64> {
    if x.len() != g.arity() {
        return Err(Error::Precondition(format!(
            "{g} takes {} arguments, got {}",
            g.arity(),
            x.len()
        )));
    }
    Ok(g.eval_unchecked(x))
}

/// Rows of an exchangeable Clayton copula sample, by gamma frailty.
pub fn sample_clayton(d: usize, theta: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    if d < 2 || !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Precondition("need d >= 2 and theta > 0".into()));
    }
    let gamma = Gamma::new(1.0 / theta, 1.0).map_err(|e| Error::Precondition(e.to_string()))?;
    Ok((0..n)
        .map(|_| {
            let w: f64 = rng.sample(gamma);
            (0..d)
                .map(|_| {
                    let e: f64 = rng.sample(Exp1);
                    // ln_1p keeps precision when e/w is small
                    (-(e / w).ln_1p() / theta).exp()
                })
                .collect()
        })
        .collect())
}

pub fn sample_clayton_seeded(d: usize, theta: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    sample_clayton(d, theta, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Quantile function of binomial(`trials`, 1/2).
pub fn binomial_quantile(u: f64, trials: u64) -> f64 {
    let b = Binomial::new(0.5, trials).expect("valid binomial");
    (0..=trials).find(|&k| b.cdf(k) >= u).unwrap_or(trials) as f64
}

/// One cell of the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub g: GFunction,
    pub n_train: usize,
    pub n_eval: usize,
    /// Binomial trials of the discretized covariates.
    pub binom_n: u64,
    pub snr: f64,
    pub theta: f64,
    /// Discretized covariates, 1-based.
    pub discrete: Vec<usize>,
}

impl Scenario {
    pub fn new(g: GFunction, n_train: usize, binom_n: u64, snr: f64) -> Self {
        Scenario {
            g,
            n_train,
            n_eval: 1000,
            binom_n,
            snr,
            theta: 1.0,
            discrete: vec![1, 2],
        }
    }

    pub fn d(&self) -> usize {
        self.g.arity()
    }

    pub fn validate(&self) -> Result<()> {
        if self.discrete.iter().any(|&j| j == 0 || j > self.d()) {
            return Err(Error::InvalidSpec("discrete columns must lie in 1..=d".into()));
        }
        if !(self.snr > 0.0) || !(self.theta > 0.0) || self.n_train == 0 || self.n_eval == 0 || self.binom_n == 0 {
            return Err(Error::InvalidSpec("snr, theta, sizes and N must be positive".into()));
        }
        Ok(())
    }

    fn covariates_from_uniforms(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, &uj)| {
                if self.discrete.contains(&(j + 1)) {
                    binomial_quantile(uj, self.binom_n)
                } else {
                    norm_quantile(uj)
                }
            })
            .collect()
    }

    /// Column kinds of the training matrix `(y, x1..xd)`.
    pub fn kinds(&self) -> Vec<ColumnKind> {
        let mut kinds = vec![ColumnKind::Continuous];
        kinds.extend((1..=self.d()).map(|j| {
            if self.discrete.contains(&j) {
                ColumnKind::Discrete
            } else {
                ColumnKind::Continuous
            }
        }));
        kinds
    }
}

/// Cached Monte-Carlo variances of `g(X)` keyed by g, theta and N.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VarianceCache {
    pub entries: BTreeMap<String, f64>,
}

impl VarianceCache {
    fn key(s: &Scenario) -> String {
        let mut disc: Vec<String> = s.discrete.iter().map(usize::to_string).collect();
        disc.sort();
        format!("{}|theta={}|N={}|discrete={}", s.g, s.theta, s.binom_n, disc.join("+"))
    }

    pub fn get_or_compute(&mut self, s: &Scenario) -> Result<f64> {
        let key = Self::key(s);
        if let Some(&v) = self.entries.get(&key) {
            return Ok(v);
        }
        let v = estimate_g_variance(s, VARIANCE_DRAWS, VARIANCE_SEED)?;
        self.entries.insert(key, v);
        Ok(v)
    }
}

/// Monte-Carlo estimate of `Var(g(X))` under the scenario's covariate law.
pub fn estimate_g_variance(s: &Scenario, draws: usize, seed: u64) -> Result<f64> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = sample_clayton(s.d(), s.theta, draws, &mut rng)?;
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, u) in rows.iter().enumerate() {
        let g = s.g.eval_unchecked(&s.covariates_from_uniforms(u));
        let delta = g - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (g - mean);
    }
    Ok(m2 / (draws - 1) as f64)
}

/// Training data `(y, x1..xd)` column-wise and evaluation covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDataset {
    pub train: Vec<Vec<f64>>,
    /// Evaluation rows, each `(x1..xd)`.
    pub eval_x: Vec<Vec<f64>>,
    pub sigma: f64,
}

pub fn build_dataset(s: &Scenario, variance: f64, seed: u64) -> Result<ScenarioDataset> {
    s.validate()?;
    let sigma = (variance / s.snr).sqrt();
    build_dataset_with_sigma(s, sigma, seed)
}

pub fn build_dataset_with_sigma(s: &Scenario, sigma: f64, seed: u64) -> Result<ScenarioDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = s.d();
    let rows = sample_clayton(d, s.theta, s.n_train + s.n_eval, &mut rng)?;
    let mut train = vec![Vec::with_capacity(s.n_train); d + 1];
    for u in &rows[..s.n_train] {
        let x = s.covariates_from_uniforms(u);
        let z: f64 = rng.sample(StandardNormal);
        train[0].push(s.g.eval_unchecked(&x) + sigma * z);
        for (j, v) in x.into_iter().enumerate() {
            train[j + 1].push(v);
        }
    }
    let eval_x = rows[s.n_train..]
        .iter()
        .map(|u| s.covariates_from_uniforms(u))
        .collect();
    Ok(ScenarioDataset { train, eval_x, sigma })
}

pub fn true_quantile(g: GFunction, sigma: f64, alpha: f64, x: &[f64]) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Request("alpha must lie in (0,1)".into()));
    }
    Ok(g_eval(g, x)? + sigma * norm_quantile(alpha))
}

/// Root average squared error of one replication.
pub fn rase(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::Precondition("prediction and truth shapes differ".into()));
    }
    let sse: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// Mean over replications of the root average squared error.
pub fn mrase(predicted: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::Precondition("prediction and truth shapes differ".into()));
    }
    let total: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| rase(p, t))
        .sum::<Result<f64>>()?;
    Ok(total / predicted.len() as f64)
}

/// Check-function loss `rho_alpha(y - q)`.
pub fn tick_loss(y: f64, q: f64, alpha: f64) -> f64 {
    let r = y - q;
    r * (alpha - if r < 0.0 { 1.0 } else { 0.0 })
}

pub fn averaged_tick_loss(y: &[f64], q: &[f64], alpha: f64) -> Result<f64> {
    if y.len() != q.len() || y.is_empty() {
        return Err(Error::Precondition("response and prediction lengths differ".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Request("alpha must lie in (0,1)".into()));
    }
    Ok(y.iter().zip(q).map(|(&a, &b)| tick_loss(a, b, alpha)).sum::<f64>() / y.len() as f64)
}

/// Paired t-test of `a - b`; returns the statistic and two-sided p-value.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Precondition("paired samples need equal length >= 2".into()));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Precondition(e.to_string()))?;
    Ok((t, 2.0 * (1.0 - dist.cdf(t.abs()))))
}

/// Seeded assignment of `n` rows to `folds` folds of near-equal size.
pub fn kfold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || folds > n {
        return Err(Error::Precondition(format!("cannot split {n} rows into {folds} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        out[i] = pos % folds;
    }
    Ok(out)
}

/// Averaged tick loss per alpha from k-fold cross-validation.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    columns: &[Vec<f64>],
    kinds: &[ColumnKind],
    response: usize,
    covariates: &[usize],
    config: &FitConfig,
    folds: usize,
    alphas: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    let n = columns.first().map_or(0, Vec::len);
    let assign = kfold_assignment(n, folds, seed)?;
    let smallest = (0..folds).map(|f| assign.iter().filter(|&&a| a == f).count()).min().unwrap_or(0);
    if smallest < 30 {
        return Err(Error::Precondition(format!("fold size {smallest} is below 30")));
    }
    let mut y_all = Vec::with_capacity(n);
    let mut q_all: Vec<Vec<f64>> = vec![Vec::with_capacity(n); alphas.len()];
    for f in 0..folds {
        let pick = |keep: bool| -> Vec<Vec<f64>> {
            columns
                .iter()
                .map(|c| c.iter().zip(&assign).filter(|(_, &a)| (a == f) != keep).map(|(v, _)| *v).collect())
                .collect()
        };
        let train = pick(true);
        let test = pick(false);
        let model = DVineRegModel::fit(&train, kinds, response, covariates, config)?;
        for row in 0..test[0].len() {
            let x: Vec<f64> = test.iter().map(|c| c[row]).collect();
            let q = model.predict_quantiles(alphas, &x)?;
            y_all.push(x[response]);
            for (k, v) in q.into_iter().enumerate() {
                q_all[k].push(v);
            }
        }
    }
    alphas
        .iter()
        .zip(&q_all)
        .map(|(&a, q)| averaged_tick_loss(&y_all, q, a))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pdvqr,
    Npdvqr,
    /// The true conditional quantile, as a harness self-check.
    Oracle,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pdvqr" => Ok(Method::Pdvqr),
            "npdvqr" => Ok(Method::Npdvqr),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::InvalidSpec(format!("unknown method '{other}'"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pdvqr => "pdvqr",
            Method::Npdvqr => "npdvqr",
            Method::Oracle => "oracle",
        })
    }
}

/// A simulation grid: the cartesian product of the listed settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub g: GFunction,
    pub n_train: Vec<usize>,
    pub binom_n: Vec<u64>,
    pub snr: Vec<f64>,
    pub alphas: Vec<f64>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    pub n_eval: usize,
    pub theta: f64,
    pub penalty: Criterion,
    pub jitter_replicates: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            g: GFunction::Linear3,
            n_train: vec![250, 1000],
            binom_n: vec![2, 8],
            snr: vec![0.5, 2.0],
            alphas: vec![0.1, 0.5, 0.9],
            methods: vec![Method::Pdvqr, Method::Npdvqr],
            replications: 20,
            seed: 0,
            n_eval: 1000,
            theta: 1.0,
            penalty: Criterion::Aic,
            jitter_replicates: 1,
        }
    }
}

/// Keys accepted by [`GridConfig::parse`].
pub const GRID_KEYS: [&str; 12] = [
    "g",
    "n_train",
    "N",
    "snr",
    "alpha",
    "methods",
    "replications",
    "seed",
    "n_eval",
    "theta",
    "penalty",
    "jitter_replicates",
];

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Parse(format!("bad value '{s}' for key '{key}'"))))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Parse(format!("key '{key}' has no values")));
    }
    Ok(items)
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("bad value '{}' for key '{key}'", value.trim())))
}

impl GridConfig {
    /// Parses `key = value` lines; `#` starts a comment and lists are comma-separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = GridConfig::default();
        let mut unknown = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!("line {}: expected key = value", lineno + 1)));
            };
            let key = key.trim();
            match key {
                "g" => cfg.g = value.parse()?,
                "n_train" => cfg.n_train = parse_list(key, value)?,
                "N" => cfg.binom_n = parse_list(key, value)?,
                "snr" => cfg.snr = parse_list(key, value)?,
                "alpha" => cfg.alphas = parse_list(key, value)?,
                "methods" => {
                    cfg.methods = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::parse)
                        .collect::<Result<_>>()?
                }
                "replications" => cfg.replications = parse_one(key, value)?,
                "seed" => cfg.seed = parse_one(key, value)?,
                "n_eval" => cfg.n_eval = parse_one(key, value)?,
                "theta" => cfg.theta = parse_one(key, value)?,
                "penalty" => cfg.penalty = value.trim().parse()?,
                "jitter_replicates" => cfg.jitter_replicates = parse_one(key, value)?,
                other => unknown.push(other.to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::InvalidSpec(format!("unknown config key(s): {}", unknown.join(", "))));
        }
        cfg.alphas.sort_by(f64::total_cmp);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.n_eval == 0 || self.jitter_replicates == 0 {
            return Err(Error::InvalidSpec("replications, n_eval and jitter_replicates must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidSpec("no methods given".into()));
        }
        if self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) || self.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec("alphas must be distinct values in (0,1)".into()));
        }
        for s in self.scenarios() {
            s.validate()?;
        }
        Ok(())
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &snr in &self.snr {
            for &n in &self.n_train {
                for &bn in &self.binom_n {
                    let mut s = Scenario::new(self.g, n, bn, snr);
                    s.n_eval = self.n_eval;
                    s.theta = self.theta;
                    out.push(s);
                }
            }
        }
        out
    }

    fn fit_config(&self, method: Method, seed: u64) -> FitConfig {
        FitConfig {
            mode: if method == Method::Npdvqr {
                Mode::Nonparametric
            } else {
                Mode::Parametric
            },
            penalty: self.penalty,
            jitter: JitterSpec {
                seed,
                replicates: self.jitter_replicates,
            },
            ..FitConfig::default()
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub snr: f64,
    pub n_train: usize,
    pub binom_n: u64,
    pub alpha: f64,
    pub method: Method,
    pub mrase: f64,
    pub rase_sd: f64,
    pub replications: usize,
    pub failures: usize,
    /// Per-replication RASE, `None` where the fit failed.
    pub rases: Vec<Option<f64>>,
    pub seconds: f64,
}

struct ReplicationOutcome {
    /// Indexed by method, then alpha.
    rases: Vec<Option<Vec<f64>>>,
    seconds: Vec<f64>,
}

fn run_replication(
    cfg: &GridConfig,
    s: &Scenario,
    sigma: f64,
    rep: usize,
) -> Result<ReplicationOutcome> {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let data = build_dataset_with_sigma(s, sigma, seed)?;
    let truth: Vec<Vec<f64>> = cfg
        .alphas
        .iter()
        .map(|&a| {
            data.eval_x
                .iter()
                .map(|x| true_quantile(s.g, sigma, a, x))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let kinds = s.kinds();
    let covariates: Vec<usize> = (1..=s.d()).collect();
    let mut rases = Vec::with_capacity(cfg.methods.len());
    let mut seconds = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let start = Instant::now();
        let preds: Option<Vec<Vec<f64>>> = match method {
            Method::Oracle => Some(truth.clone()),
            _ => DVineRegModel::fit(&data.train, &kinds, 0, &covariates, &cfg.fit_config(method, seed))
                .ok()
                .and_then(|model| {
                    let mut per_alpha = vec![Vec::with_capacity(data.eval_x.len()); cfg.alphas.len()];
                    for x in &data.eval_x {
                        let mut row = vec![f64::NAN];
                        row.extend_from_slice(x);
                        let q = model.predict_quantiles(&cfg.alphas, &row).ok()?;
                        for (k, v) in q.into_iter().enumerate() {
                            per_alpha[k].push(v);
                        }
                    }
                    Some(per_alpha)
                }),
        };
        seconds.push(start.elapsed().as_secs_f64());
        rases.push(match preds {
            Some(p) => Some(
                p.iter()
                    .zip(&truth)
                    .map(|(p, t)| rase(p, t))
                    .collect::<Result<Vec<f64>>>()?,
            ),
            None => None,
        });
    }
    Ok(ReplicationOutcome { rases, seconds })
}

/// Runs every scenario, method and alpha of the grid.
///
/// Replications run in parallel with seed `seed + replication`; one dataset
/// and one fit per method serve all alphas of a replication.
pub fn run_grid(cfg: &GridConfig, cache: &mut VarianceCache) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for s in cfg.scenarios() {
        let sigma = (cache.get_or_compute(&s)? / s.snr).sqrt();
        let outcomes: Vec<ReplicationOutcome> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_replication(cfg, &s, sigma, rep))
            .collect::<Result<_>>()?;
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let seconds: f64 = outcomes.iter().map(|o| o.seconds[mi]).sum();
            for (ai, &alpha) in cfg.alphas.iter().enumerate() {
                let rases: Vec<Option<f64>> = outcomes
                    .iter()
                    .map(|o| o.rases[mi].as_ref().map(|r| r[ai]))
                    .collect();
                let ok: Vec<f64> = rases.iter().flatten().copied().collect();
                let failures = rases.len() - ok.len();
                let mean = if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().sum::<f64>() / ok.len() as f64
                };
                let sd = if ok.len() > 1 {
                    (ok.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
                out.push(CellResult {
                    snr: s.snr,
                    n_train: s.n_train,
                    binom_n: s.binom_n,
                    alpha,
                    method,
                    mrase: mean,
                    rase_sd: sd,
                    replications: ok.len(),
                    failures,
                    rases,
                    seconds,
                });
            }
        }
    }
    Ok(out)
}

pub const RESULTS_HEADER: [&str; 9] = [
    "snr",
    "n_train",
    "N",
    "alpha",
    "method",
    "mrase",
    "rase_sd",
    "replications",
    "failures",
];

/// Writes the results table as CSV.
pub fn write_results_csv<W: Write>(results: &[CellResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(RESULTS_HEADER).map_err(io)?;
    for r in results {
        w.write_record([
            format_num(r.snr),
            r.n_train.to_string(),
            r.binom_n.to_string(),
            format_num(r.alpha),
            r.method.to_string(),
            format_num(r.mrase),
            format_num(r.rase_sd),
            r.replications.to_string(),
            r.failures.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

/// Formats with 12 significant digits.
pub fn format_num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{:.*e}", 11, x);
    let v: f64 = s.parse().expect("formatted float");
    format!("{v}")
}
