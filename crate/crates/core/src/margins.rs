//! Univariate margins and probability-integral transforms.
//!
//! Fitted CDFs are multiplied by `n/(n+1)` so pseudo-observations stay off 1.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf};

/// Default cap on the number of distinct values of a discrete column.
pub const DEFAULT_MAX_DISCRETE: usize = 50;
/// Auto-detection treats integer columns with at most this many values as discrete.
pub const AUTO_DISCRETE_MAX: usize = 20;

const MIN_OBS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

impl FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" | "c" => Ok(ColumnKind::Continuous),
            "discrete" | "d" => Ok(ColumnKind::Discrete),
            other => Err(Error::Schema(format!("unknown column kind '{other}'"))),
        }
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Continuous => "continuous",
            ColumnKind::Discrete => "discrete",
        })
    }
}

/// Guesses the kind of a column: integer-valued with at most 20 distinct
/// values is discrete, anything else continuous.
pub fn detect_kind(column: &[f64]) -> ColumnKind {
    let integer = column.iter().all(|x| x.is_finite() && x.fract() == 0.0);
    if !integer {
        return ColumnKind::Continuous;
    }
    let mut values: Vec<f64> = column.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() <= AUTO_DISCRETE_MAX {
        ColumnKind::Discrete
    } else {
        ColumnKind::Continuous
    }
}

/// A copula-scale observation: value `u`, left limit `uminus`, and whether the
/// underlying variable is discrete.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoObs {
    pub u: f64,
    pub uminus: f64,
    pub discrete: bool,
}

impl PseudoObs {
    pub fn continuous(u: f64) -> Self {
        PseudoObs {
            u,
            uminus: u,
            discrete: false,
        }
    }

    pub fn discrete(u: f64, uminus: f64) -> Self {
        PseudoObs {
            u,
            uminus,
            discrete: true,
        }
    }

    /// Probability mass of the cell, `u - uminus` (zero for continuous).
    pub fn jump(&self) -> f64 {
        self.u - self.uminus
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.uminus)
            && self.uminus <= self.u
            && self.u <= 1.0
            && (self.discrete || self.u == self.uminus)
    }
}

/// Gaussian-kernel smoothed empirical CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousMargin {
    sample: Vec<f64>,
    bandwidth: f64,
    scale: f64,
}

impl ContinuousMargin {
    pub fn fit(column: &[f64]) -> Result<Self> {
        let n = column.len();
        if n < MIN_OBS {
            return Err(Error::Precondition(format!(
                "at least {MIN_OBS} observations required, got {n}"
            )));
        }
        if column.iter().any(|x| !x.is_finite()) {
            return Err(Error::Precondition("non-finite value in column".into()));
        }
        let mean = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if sd <= 0.0 || !sd.is_finite() {
            return Err(Error::DegenerateMargin("constant column".into()));
        }
        let mut sample = column.to_vec();
        sample.sort_by(f64::total_cmp);
        Ok(ContinuousMargin {
            sample,
            bandwidth: 1.06 * sd * (n as f64).powf(-0.2),
            scale: n as f64 / (n as f64 + 1.0),
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.is_empty()
    }

    /// Unscaled kernel CDF `(1/n) sum Phi((x - x_i)/h)`.
    fn raw_cdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        // points more than 9 bandwidths below x contribute exactly 1.0 in f64
        let full = self.sample.partition_point(|&s| s < x - 9.0 * h);
        // above x + 9h terms are below 1e-19; only the far lower tail needs them
        let reach = if full > 0 { 9.0 } else { 38.0 };
        let end = self.sample.partition_point(|&s| s < x + reach * h);
        let partial: f64 = self.sample[full..end]
            .iter()
            .map(|&s| norm_cdf((x - s) / h))
            .sum();
        (full as f64 + partial) / self.sample.len() as f64
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.scale * self.raw_cdf(x)
    }

    /// Unscaled kernel density at `x`.
    fn raw_pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let start = self.sample.partition_point(|&s| s < x - 38.0 * h);
        let end = self.sample.partition_point(|&s| s < x + 38.0 * h);
        let total: f64 = self.sample[start..end]
            .iter()
            .map(|&s| norm_pdf((x - s) / h))
            .sum();
        total / (self.sample.len() as f64 * h)
    }

    /// Inverse of [`cdf`](Self::cdf): Newton steps from the empirical
    /// quantile, kept inside a shrinking bracket.
    pub fn quantile(&self, alpha: f64) -> f64 {
        let target = (alpha / self.scale).clamp(1e-300, 1.0 - 1e-12);
        let h = self.bandwidth;
        let n = self.sample.len();
        let mut lo = self.sample[0] - 40.0 * h;
        let mut hi = self.sample[n - 1] + 40.0 * h;
        let mut x = self.sample[((target * n as f64) as usize).min(n - 1)];
        for _ in 0..200 {
            let err = self.raw_cdf(x) - target;
            if err == 0.0 {
                break;
            }
            if err < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.raw_pdf(x);
            let newton = x - err / d;
            let next = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let done = (next - x).abs() < 1e-12 * (1.0 + x.abs()) || hi - lo < 1e-12 * (1.0 + x.abs());
            x = next;
            if done {
                break;
            }
        }
        x
    }
}

/// Empirical probability mass function on the observed support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMargin {
    support: Vec<f64>,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
    scale: f64,
}

impl DiscreteMargin {
    pub fn fit(column: &[f64], max_distinct: usize) -> Result<Self> {
        let n = column.len();
        if n < MIN_OBS {
            return Err(Error::Precondition(format!(
                "at least {MIN_OBS} observations required, got {n}"
            )));
        }
        if column.iter().any(|x| !x.is_finite()) {
            return Err(Error::Precondition("non-finite value in column".into()));
        }
        let mut sorted = column.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut support = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for x in sorted {
            if support.last() == Some(&x) {
                *counts.last_mut().expect("nonempty") += 1;
            } else {
                support.push(x);
                counts.push(1);
            }
        }
        if support.len() < 2 {
            return Err(Error::DegenerateMargin("constant column".into()));
        }
        if support.len() > max_distinct {
            return Err(Error::Precondition(format!(
                "discrete column has {} distinct values (max {max_distinct})",
                support.len()
            )));
        }
        let pmf: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Self::build(support, pmf, n as f64 / (n as f64 + 1.0))
    }

    /// A margin with a known probability mass function and no rescaling.
    pub fn from_pmf(support: Vec<f64>, pmf: Vec<f64>) -> Result<Self> {
        if support.len() != pmf.len() || support.is_empty() {
            return Err(Error::Precondition("support and pmf lengths differ".into()));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Precondition("support must be strictly increasing".into()));
        }
        let total: f64 = pmf.iter().sum();
        if pmf.iter().any(|&p| p <= 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition("pmf entries must be positive and sum to 1".into()));
        }
        Self::build(support, pmf, 1.0)
    }

    fn build(support: Vec<f64>, pmf: Vec<f64>, scale: f64) -> Result<Self> {
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        *cdf.last_mut().expect("nonempty") = 1.0;
        Ok(DiscreteMargin {
            support,
            pmf,
            cdf,
            scale,
        })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// Index of the support value nearest to `x`; ties go to the larger value.
    pub fn snap_index(&self, x: f64) -> usize {
        let k = self.support.partition_point(|&s| s < x);
        if k == 0 {
            return 0;
        }
        if k == self.support.len() {
            return k - 1;
        }
        let below = x - self.support[k - 1];
        let above = self.support[k] - x;
        if above <= below {
            k
        } else {
            k - 1
        }
    }

    /// Scaled CDF at the `k`-th support point and its left limit.
    pub fn cell(&self, k: usize) -> (f64, f64) {
        let upper = self.scale * self.cdf[k];
        let lower = if k == 0 { 0.0 } else { self.scale * self.cdf[k - 1] };
        (upper, lower)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.support.partition_point(|&s| s <= x);
        if k == 0 {
            0.0
        } else {
            self.scale * self.cdf[k - 1]
        }
    }

    pub fn quantile(&self, alpha: f64) -> f64 {
        let k = self
            .cdf
            .iter()
            .position(|&c| self.scale * c >= alpha)
            .unwrap_or(self.support.len() - 1);
        self.support[k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MarginalModel {
    Continuous(ContinuousMargin),
    Discrete(DiscreteMargin),
}

impl MarginalModel {
    pub fn kind(&self) -> ColumnKind {
        match self {
            MarginalModel::Continuous(_) => ColumnKind::Continuous,
            MarginalModel::Discrete(_) => ColumnKind::Discrete,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, MarginalModel::Discrete(_))
    }

    /// Probability-integral transform. Discrete query points are snapped to
    /// the nearest support value first.
    pub fn pit(&self, x: f64) -> PseudoObs {
        match self {
            MarginalModel::Continuous(m) => PseudoObs::continuous(m.cdf(x)),
            MarginalModel::Discrete(m) => {
                let (u, uminus) = m.cell(m.snap_index(x));
                PseudoObs::discrete(u, uminus)
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            MarginalModel::Continuous(m) => m.cdf(x),
            MarginalModel::Discrete(m) => m.cdf(x),
        }
    }

    /// Generalized inverse of the (scaled) CDF.
    pub fn quantile(&self, alpha: f64) -> f64 {
        match self {
            MarginalModel::Continuous(m) => m.quantile(alpha),
            MarginalModel::Discrete(m) => m.quantile(alpha),
        }
    }
}

/// Fits a margin of the given kind, allowing up to 50 distinct discrete values.
pub fn fit_margin(column: &[f64], kind: ColumnKind) -> Result<MarginalModel> {
    fit_margin_with(column, kind, DEFAULT_MAX_DISCRETE)
}

pub fn fit_margin_with(column: &[f64], kind: ColumnKind, max_distinct: usize) -> Result<MarginalModel> {
    match kind {
        ColumnKind::Continuous => ContinuousMargin::fit(column).map(MarginalModel::Continuous),
        ColumnKind::Discrete => DiscreteMargin::fit(column, max_distinct).map(MarginalModel::Discrete),
    }
}
