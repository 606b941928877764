//! D-vine quantile regression with the response fixed as the first node.
//!
//! Node 0 of the path is the response, node `j >= 1` the `j`-th selected
//! covariate. Tree `t` holds edges `(i, i + t)`; `pairs[t - 1][i]` stores the
//! copula of that edge. The recursion keeps, per node, the forward
//! conditionals `F(i | i+1..i+t-1)` and the backward ones `F(j | j-t+1..j-1)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicop::{default_candidates, Candidate, Criterion, Direction, PairCopula};
use crate::error::{Error, Result};
use crate::margins::{fit_margin_with, ColumnKind, ContinuousMargin, MarginalModel, PseudoObs, DEFAULT_MAX_DISCRETE};
use crate::mixedpair::{cond_transform, mixed_loglik, pair_cond_term, select_mixed, LOG_FLOOR};
use crate::npcop::{fit_kernel_copula, jitter, JitterSpec, KernelCopula, RankCoder};
use crate::optim::bisect_increasing;

pub const MODEL_FORMAT: &str = "dvqr-model";
pub const MODEL_VERSION: u32 = 1;
/// Default effective parameter count charged per kernel pair-copula.
pub const DEFAULT_NP_PAIR_PARAMS: f64 = 5.0;
/// Minimum number of complete observations for a fit.
pub const MIN_FIT_OBS: usize = 30;

const TIE_TOL: f64 = 1e-9;
const BISECT_LO: f64 = 1e-10;
const BISECT_HI: f64 = 1.0 - 1e-10;
const BISECT_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Parametric,
    Nonparametric,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "parametric" | "pdvqr" => Ok(Mode::Parametric),
            "nonparametric" | "npdvqr" => Ok(Mode::Nonparametric),
            other => Err(Error::InvalidSpec(format!("unknown mode '{other}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Parametric => "parametric",
            Mode::Nonparametric => "nonparametric",
        })
    }
}

/// Settings for [`DVineRegModel::fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub mode: Mode,
    pub penalty: Criterion,
    /// Family and rotation candidates for parametric pairs.
    pub candidates: Vec<Candidate>,
    pub jitter: JitterSpec,
    /// Effective parameters charged per kernel pair under AIC/BIC.
    pub np_pair_params: f64,
    pub max_discrete: usize,
    /// Stop after this many covariates (unbounded when `None`).
    pub max_covariates: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: Mode::Parametric,
            penalty: Criterion::Aic,
            candidates: default_candidates(),
            jitter: JitterSpec::default(),
            np_pair_params: DEFAULT_NP_PAIR_PARAMS,
            max_discrete: DEFAULT_MAX_DISCRETE,
            max_covariates: None,
        }
    }
}

/// A fitted pair-copula of either mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Pair {
    Parametric(PairCopula),
    Kernel(KernelCopula),
}

impl Pair {
    fn independence() -> Self {
        Pair::Parametric(PairCopula::independence())
    }

    pub fn is_independence(&self) -> bool {
        matches!(self, Pair::Parametric(c) if c.is_independence())
    }

    fn parameter_count(&self, np_pair_params: f64) -> f64 {
        match self {
            Pair::Parametric(c) => c.parameter_count() as f64,
            Pair::Kernel(_) => np_pair_params,
        }
    }

    fn transform(&self, target: &PseudoObs, given: &PseudoObs, dir: Direction) -> PseudoObs {
        match self {
            Pair::Parametric(c) => cond_transform(c, target, given, dir).unwrap_or_else(|_| {
                // a conditioner without mass: use the limit of the difference quotient
                let g = PseudoObs::continuous(given.u);
                cond_transform(c, target, &g, dir).expect("continuous conditioner cannot fail")
            }),
            Pair::Kernel(k) => {
                let u = k.hfunc(target.u, given.u, dir);
                if target.discrete {
                    PseudoObs::discrete(u, k.hfunc(target.uminus, given.u, dir).min(u))
                } else {
                    PseudoObs::continuous(u)
                }
            }
        }
    }

    fn cond_term(&self, a: &PseudoObs, b: &PseudoObs) -> f64 {
        match self {
            Pair::Parametric(c) => pair_cond_term(c, a, b),
            Pair::Kernel(k) => k.ln_pdf(a.u, b.u),
        }
    }

    /// Applies the inverse h-function to every entry of `ps` for one conditioning value.
    fn hinv_all(&self, ps: &mut [f64], given: f64) {
        match self {
            Pair::Parametric(c) => ps
                .iter_mut()
                .for_each(|p| *p = c.hinv(*p, given, Direction::FirstGivenSecond)),
            Pair::Kernel(k) => k.hinv_all(ps, given, Direction::FirstGivenSecond),
        }
    }
}

/// Margins, pair array and in-sample cll for one (possibly jittered) dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VineFit {
    pub response_margin: MarginalModel,
    /// Margins of the selected covariates, in vine order.
    pub covariate_margins: Vec<MarginalModel>,
    pub pairs: Vec<Vec<Pair>>,
    pub cll: f64,
}

impl VineFit {
    fn pair(&self, i: usize, j: usize) -> &Pair {
        &self.pairs[j - i - 1][i]
    }

    /// Backward conditionals `F(t | 1..t-1)` for `t = 1..k` of a covariate row.
    fn conditioning_chain(&self, pits: &[PseudoObs]) -> Vec<PseudoObs> {
        let k = pits.len();
        let mut forward: Vec<Vec<PseudoObs>> = vec![Vec::new(); k + 1];
        let mut chain = Vec::with_capacity(k);
        for m in 1..=k {
            let mut b = pits[m - 1];
            for t in 1..m {
                let i = m - t;
                let a = forward[i][t - 1];
                let pair = self.pair(i, m);
                forward[i].push(pair.transform(&a, &b, Direction::FirstGivenSecond));
                b = pair.transform(&b, &a, Direction::SecondGivenFirst);
            }
            forward[m].push(pits[m - 1]);
            chain.push(b);
        }
        chain
    }

    fn cond_cdf(&self, v: PseudoObs, chain: &[PseudoObs]) -> PseudoObs {
        chain.iter().enumerate().fold(v, |a, (t, b)| {
            self.pair(0, t + 1).transform(&a, b, Direction::FirstGivenSecond)
        })
    }

    fn row_cll(&self, v: PseudoObs, chain: &[PseudoObs]) -> f64 {
        let mut a = v;
        let mut total = 0.0;
        for (t, b) in chain.iter().enumerate() {
            let pair = self.pair(0, t + 1);
            if !v.discrete {
                total += pair.cond_term(&a, b);
            }
            a = pair.transform(&a, b, Direction::FirstGivenSecond);
        }
        if v.discrete {
            a.jump().max(LOG_FLOOR).ln()
        } else {
            total
        }
    }

    fn all_parametric(&self) -> bool {
        self.pairs.iter().flatten().all(|p| matches!(p, Pair::Parametric(_)))
    }
}

/// Per-column pseudo-observations of one dataset.
struct Prepared {
    response_margin: MarginalModel,
    response: Vec<PseudoObs>,
    margins: Vec<Option<MarginalModel>>,
    pits: Vec<Option<Vec<PseudoObs>>>,
}

struct Context<'a> {
    config: &'a FitConfig,
    response_discrete: bool,
    n: usize,
}

/// Current vine during forward selection.
struct VineState {
    nodes: Vec<usize>,
    /// `forward[i][t - 1]` holds `F(i | i+1..i+t-1)` for every observation.
    forward: Vec<Vec<Vec<PseudoObs>>>,
    pairs: Vec<Vec<Pair>>,
    cll: f64,
    params: f64,
    clamps: usize,
}

struct Extension {
    column: usize,
    /// New pairs, index `t - 1` is the edge `(m - t, m)`.
    pairs: Vec<Pair>,
    /// New forward conditionals, index `t - 1` belongs to node `m - t`.
    forward: Vec<Vec<PseudoObs>>,
    cll: f64,
    params: f64,
    clamps: usize,
}

impl VineState {
    fn new(response: Vec<PseudoObs>, response_discrete: bool) -> Self {
        let cll = if response_discrete {
            response.iter().map(|p| p.jump().max(LOG_FLOOR).ln()).sum()
        } else {
            0.0
        };
        VineState {
            nodes: Vec::new(),
            forward: vec![vec![response]],
            pairs: Vec::new(),
            cll,
            params: 0.0,
            clamps: 0,
        }
    }

    fn extend(&self, column: usize, pits: &[PseudoObs], ctx: &Context<'_>) -> Extension {
        let m = self.nodes.len() + 1;
        let mut b = pits.to_vec();
        let mut pairs = Vec::with_capacity(m);
        let mut forward = Vec::with_capacity(m);
        let mut params = self.params;
        let mut clamps = self.clamps;
        let mut cll = self.cll;
        for t in 1..=m {
            let i = m - t;
            let a = &self.forward[i][t - 1];
            let (pair, c) = fit_pair(a, &b, ctx.config);
            clamps += c;
            params += pair.parameter_count(ctx.config.np_pair_params);
            let a_next: Vec<PseudoObs> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| pair.transform(x, y, Direction::FirstGivenSecond))
                .collect();
            if i == 0 {
                cll = if ctx.response_discrete {
                    a_next.iter().map(|p| p.jump().max(LOG_FLOOR).ln()).sum()
                } else {
                    self.cll + a.iter().zip(&b).map(|(x, y)| pair.cond_term(x, y)).sum::<f64>()
                };
            } else {
                b = b
                    .iter()
                    .zip(a)
                    .map(|(y, x)| pair.transform(y, x, Direction::SecondGivenFirst))
                    .collect();
            }
            forward.push(a_next);
            pairs.push(pair);
        }
        Extension {
            column,
            pairs,
            forward,
            cll,
            params,
            clamps,
        }
    }

    fn apply(&mut self, ext: Extension, pits: Vec<PseudoObs>) {
        let m = self.nodes.len() + 1;
        for (idx, (pair, fwd)) in ext.pairs.into_iter().zip(ext.forward).enumerate() {
            let t = idx + 1;
            let i = m - t;
            if self.pairs.len() < t {
                self.pairs.push(Vec::new());
            }
            debug_assert_eq!(self.pairs[t - 1].len(), i);
            self.pairs[t - 1].push(pair);
            self.forward[i].push(fwd);
        }
        self.forward.push(vec![pits]);
        self.nodes.push(ext.column);
        self.cll = ext.cll;
        self.params = ext.params;
        self.clamps = ext.clamps;
    }
}

fn fit_pair(a: &[PseudoObs], b: &[PseudoObs], config: &FitConfig) -> (Pair, usize) {
    match config.mode {
        Mode::Parametric => {
            let data: Vec<(PseudoObs, PseudoObs)> = a.iter().copied().zip(b.iter().copied()).collect();
            match select_mixed(&data, config.penalty, &config.candidates) {
                Ok(sel) => {
                    let clamps = mixed_loglik(&sel.copula, &data).clamps;
                    (Pair::Parametric(sel.copula), clamps)
                }
                Err(_) => (Pair::independence(), 0),
            }
        }
        Mode::Nonparametric => {
            let data: Vec<(f64, f64)> = a
                .iter()
                .zip(b)
                .map(|(x, y)| (crate::bicop::clamp_unit(x.u), crate::bicop::clamp_unit(y.u)))
                .collect();
            match fit_kernel_copula(&data) {
                Ok(k) => (Pair::Kernel(k), 0),
                Err(_) => (Pair::independence(), 0),
            }
        }
    }
}

/// Fitted D-vine quantile regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DVineRegModel {
    format: String,
    version: u32,
    mode: Mode,
    penalty: Criterion,
    n_columns: usize,
    response: usize,
    kinds: Vec<ColumnKind>,
    covariates: Vec<usize>,
    omitted: Vec<usize>,
    /// Rank coders of discrete columns, used in nonparametric mode only.
    coders: Vec<Option<RankCoder>>,
    jitter: JitterSpec,
    np_pair_params: f64,
    n_obs: usize,
    fits: Vec<VineFit>,
    cll: f64,
    params: f64,
    penalized_cll: f64,
    clamp_events: usize,
}

fn check_columns(columns: &[Vec<f64>], kinds: &[ColumnKind]) -> Result<usize> {
    if columns.is_empty() || columns.len() != kinds.len() {
        return Err(Error::Schema("column count does not match kinds".into()));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Schema("columns have different lengths".into()));
    }
    if columns.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("data contain non-finite values".into()));
    }
    Ok(n)
}

fn prepare(
    columns: &[Vec<f64>],
    kinds: &[ColumnKind],
    response: usize,
    covariates: &[usize],
    coders: &[Option<RankCoder>],
    config: &FitConfig,
    replicate: usize,
) -> Result<Prepared> {
    let margin_and_pits = |c: usize| -> Result<(MarginalModel, Vec<PseudoObs>)> {
        let column: Vec<f64> = match (&coders[c], config.mode) {
            (Some(coder), Mode::Nonparametric) => {
                let codes = coder.encode(&columns[c]);
                jitter(&codes, &mut config.jitter.rng(replicate, c))
            }
            _ => columns[c].clone(),
        };
        let kind = if config.mode == Mode::Nonparametric {
            ColumnKind::Continuous
        } else {
            kinds[c]
        };
        let margin = fit_margin_with(&column, kind, config.max_discrete)?;
        let pits = column.iter().map(|&x| margin.pit(x)).collect();
        Ok((margin, pits))
    };
    let (response_margin, response_pits) = margin_and_pits(response)?;
    let mut margins = vec![None; columns.len()];
    let mut pits = vec![None; columns.len()];
    for &c in covariates {
        let (m, p) = margin_and_pits(c)?;
        margins[c] = Some(m);
        pits[c] = Some(p);
    }
    Ok(Prepared {
        response_margin,
        response: response_pits,
        margins,
        pits,
    })
}

impl DVineRegModel {
    /// Fits the model by forward covariate selection.
    ///
    /// `columns` holds the data column-wise; `covariates` lists the candidate
    /// column indices. Selection runs on the first jitter replicate; further
    /// replicates refit the pair-copulas for the selected order.
    pub fn fit(
        columns: &[Vec<f64>],
        kinds: &[ColumnKind],
        response: usize,
        covariates: &[usize],
        config: &FitConfig,
    ) -> Result<Self> {
        let n = check_columns(columns, kinds)?;
        if n < MIN_FIT_OBS {
            return Err(Error::Precondition(format!(
                "at least {MIN_FIT_OBS} observations required, got {n}"
            )));
        }
        if response >= columns.len() {
            return Err(Error::Schema("response index out of range".into()));
        }
        let mut candidates: Vec<usize> = covariates.to_vec();
        candidates.sort_unstable();
        candidates.dedup();
        if candidates.is_empty() {
            return Err(Error::Schema("at least one covariate is required".into()));
        }
        if candidates.iter().any(|&c| c == response || c >= columns.len()) {
            return Err(Error::Schema("invalid covariate index".into()));
        }
        if config.candidates.is_empty() && config.mode == Mode::Parametric {
            return Err(Error::InvalidSpec("empty family candidate set".into()));
        }
        let coders: Vec<Option<RankCoder>> = kinds
            .iter()
            .zip(columns)
            .map(|(k, col)| match (k, config.mode) {
                (ColumnKind::Discrete, Mode::Nonparametric) => RankCoder::fit(col).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<_>>()?;
        let response_discrete = kinds[response] == ColumnKind::Discrete && config.mode == Mode::Parametric;
        let ctx = Context {
            config,
            response_discrete,
            n,
        };

        let prep = prepare(columns, kinds, response, &candidates, &coders, config, 0)?;
        let mut state = VineState::new(prep.response.clone(), response_discrete);
        let mut score = config.penalty.score(state.cll, 0.0, ctx.n);
        let mut remaining = candidates.clone();
        let limit = config.max_covariates.unwrap_or(usize::MAX);
        while !remaining.is_empty() && state.nodes.len() < limit {
            let exts: Vec<Extension> = remaining
                .par_iter()
                .map(|&c| state.extend(c, prep.pits[c].as_ref().expect("prepared"), &ctx))
                .collect();
            let mut best: Option<(f64, Extension)> = None;
            for ext in exts {
                if !ext.cll.is_finite() {
                    continue;
                }
                let s = config.penalty.score(ext.cll, ext.params, ctx.n);
                if best.as_ref().is_none_or(|(b, _)| s > b + TIE_TOL) {
                    best = Some((s, ext));
                }
            }
            match best {
                Some((s, ext)) if s > score + TIE_TOL => {
                    score = s;
                    let c = ext.column;
                    remaining.retain(|&r| r != c);
                    state.apply(ext, prep.pits[c].clone().expect("prepared"));
                }
                _ => break,
            }
        }
        if !state.cll.is_finite() {
            return Err(Error::Precondition("conditional log-likelihood is not finite".into()));
        }

        let order = state.nodes.clone();
        let mut fits = vec![VineFit {
            response_margin: prep.response_margin,
            covariate_margins: order
                .iter()
                .map(|&c| prep.margins[c].clone().expect("prepared"))
                .collect(),
            pairs: state.pairs.clone(),
            cll: state.cll,
        }];
        let replicates = if config.mode == Mode::Nonparametric && coders.iter().any(Option::is_some) {
            config.jitter.replicates
        } else {
            1
        };
        for r in 1..replicates {
            let prep = prepare(columns, kinds, response, &order, &coders, config, r)?;
            let mut st = VineState::new(prep.response.clone(), response_discrete);
            for &c in &order {
                let pits = prep.pits[c].clone().expect("prepared");
                let ext = st.extend(c, &pits, &ctx);
                st.apply(ext, pits);
            }
            fits.push(VineFit {
                response_margin: prep.response_margin,
                covariate_margins: order
                    .iter()
                    .map(|&c| prep.margins[c].clone().expect("prepared"))
                    .collect(),
                pairs: st.pairs,
                cll: st.cll,
            });
        }

        let omitted = candidates.iter().copied().filter(|c| !order.contains(c)).collect();
        Ok(DVineRegModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            mode: config.mode,
            penalty: config.penalty,
            n_columns: columns.len(),
            response,
            kinds: kinds.to_vec(),
            covariates: order,
            omitted,
            coders,
            jitter: config.jitter,
            np_pair_params: config.np_pair_params,
            n_obs: n,
            fits,
            cll: state.cll,
            params: state.params,
            penalized_cll: score,
            clamp_events: state.clamps,
        })
    }

    /// Builds a parametric model from known margins and pair-copulas.
    ///
    /// Column 0 is the response and column `j` the `j`-th vine node;
    /// `pairs[t][i]` is the copula of edge `(i, i + t + 1)`.
    pub fn from_parametric_parts(
        response_margin: MarginalModel,
        covariate_margins: Vec<MarginalModel>,
        pairs: Vec<Vec<PairCopula>>,
    ) -> Result<Self> {
        let k = covariate_margins.len();
        if pairs.len() != k || pairs.iter().enumerate().any(|(t, row)| row.len() != k - t) {
            return Err(Error::InvalidSpec("pair array shape does not match covariates".into()));
        }
        for c in pairs.iter().flatten() {
            c.validate()?;
        }
        let mut kinds = vec![response_margin.kind()];
        kinds.extend(covariate_margins.iter().map(MarginalModel::kind));
        let params = pairs.iter().flatten().map(|c| c.parameter_count() as f64).sum();
        Ok(DVineRegModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            mode: Mode::Parametric,
            penalty: Criterion::Cll,
            n_columns: k + 1,
            response: 0,
            coders: vec![None; k + 1],
            kinds,
            covariates: (1..=k).collect(),
            omitted: Vec::new(),
            jitter: JitterSpec::default(),
            np_pair_params: DEFAULT_NP_PAIR_PARAMS,
            n_obs: 0,
            fits: vec![VineFit {
                response_margin,
                covariate_margins,
                pairs: pairs
                    .into_iter()
                    .map(|row| row.into_iter().map(Pair::Parametric).collect())
                    .collect(),
                cll: 0.0,
            }],
            cll: 0.0,
            params,
            penalized_cll: 0.0,
            clamp_events: 0,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn penalty(&self) -> Criterion {
        self.penalty
    }

    pub fn response(&self) -> usize {
        self.response
    }

    pub fn n_columns(&self) -> usize {
        self.n_columns
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    /// Selected covariate columns in vine order.
    pub fn covariates(&self) -> &[usize] {
        &self.covariates
    }

    /// Candidate covariates left out by forward selection.
    pub fn omitted(&self) -> &[usize] {
        &self.omitted
    }

    /// Set when no covariate improved the penalized cll.
    pub fn no_covariates(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn fits(&self) -> &[VineFit] {
        &self.fits
    }

    pub fn jitter(&self) -> JitterSpec {
        self.jitter
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// In-sample conditional log-likelihood (first replicate).
    pub fn fitted_cll(&self) -> f64 {
        self.cll
    }

    /// Penalized cll at the selected model, larger is better.
    pub fn fitted_penalized_cll(&self) -> f64 {
        self.penalized_cll
    }

    /// Total parameter count: one per non-independence parametric pair, the
    /// configured effective count per kernel pair.
    pub fn parameter_count(&self) -> f64 {
        self.params
    }

    /// Number of likelihood terms floored during fitting.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn pair_array(&self) -> &[Vec<Pair>] {
        &self.fits[0].pairs
    }

    fn covariate_pits(&self, fit: &VineFit, x: &[f64]) -> Result<Vec<PseudoObs>> {
        if x.len() != self.n_columns {
            return Err(Error::Schema(format!(
                "row has {} values, model expects {}",
                x.len(),
                self.n_columns
            )));
        }
        self.covariates
            .iter()
            .zip(&fit.covariate_margins)
            .map(|(&c, m)| {
                let value = x[c];
                if !value.is_finite() {
                    return Err(Error::Request(format!("covariate {c} is not finite")));
                }
                Ok(match &self.coders[c] {
                    Some(coder) => m.pit(coder.code(value) as f64),
                    None => m.pit(value),
                })
            })
            .collect()
    }

    /// Covariates of `x` that are off the fitted discrete support and were snapped.
    pub fn snapped_covariates(&self, x: &[f64]) -> Vec<usize> {
        self.covariates
            .iter()
            .zip(&self.fits[0].covariate_margins)
            .filter(|(&c, m)| match (m, &self.coders[c]) {
                (_, Some(coder)) => !coder.support().contains(&x[c]),
                (MarginalModel::Discrete(d), None) => !d.support().contains(&x[c]),
                _ => false,
            })
            .map(|(&c, _)| c)
            .collect()
    }

    /// Conditional distribution `C(v | u)` of the copula-scale response given
    /// the covariates of the full-width row `x`, averaged over replicates.
    pub fn cond_cdf(&self, v: PseudoObs, x: &[f64]) -> Result<f64> {
        if !v.is_valid() {
            return Err(Error::Request("invalid response pseudo-observation".into()));
        }
        let mut total = 0.0;
        for fit in &self.fits {
            let chain = fit.conditioning_chain(&self.covariate_pits(fit, x)?);
            total += fit.cond_cdf(v, &chain).u;
        }
        Ok(total / self.fits.len() as f64)
    }

    /// Conditional quantiles of the response for ascending `alphas`.
    pub fn predict_quantiles(&self, alphas: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.predict_inner(alphas, x, false)
    }

    /// As [`predict_quantiles`](Self::predict_quantiles) but always inverting
    /// the conditional CDF by bisection.
    pub fn predict_quantiles_by_bisection(&self, alphas: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.predict_inner(alphas, x, true)
    }

    fn predict_inner(&self, alphas: &[f64], x: &[f64], force_bisection: bool) -> Result<Vec<f64>> {
        check_alphas(alphas)?;
        let mut acc = vec![0.0; alphas.len()];
        for fit in &self.fits {
            let pits = self.covariate_pits(fit, x)?;
            let chain = fit.conditioning_chain(&pits);
            let values = match &fit.response_margin {
                MarginalModel::Discrete(d) => {
                    let cond: Vec<f64> = (0..d.support().len())
                        .map(|k| {
                            let (u, um) = d.cell(k);
                            fit.cond_cdf(PseudoObs::discrete(u, um), &chain).u
                        })
                        .collect();
                    alphas
                        .iter()
                        .map(|&a| {
                            let k = cond.iter().position(|&c| c >= a).unwrap_or(cond.len() - 1);
                            d.support()[k]
                        })
                        .collect::<Vec<f64>>()
                }
                MarginalModel::Continuous(margin) => {
                    let closed_form = !force_bisection
                        && pits.iter().all(|p| !p.discrete)
                        && (fit.all_parametric() || self.mode == Mode::Nonparametric);
                    let mut v = alphas.to_vec();
                    if closed_form {
                        for t in (1..=chain.len()).rev() {
                            fit.pair(0, t).hinv_all(&mut v, chain[t - 1].u);
                        }
                    } else {
                        for x in v.iter_mut() {
                            *x = bisect_increasing(
                                |v| fit.cond_cdf(PseudoObs::continuous(v), &chain).u,
                                *x,
                                BISECT_LO,
                                BISECT_HI,
                                0.0,
                                BISECT_STEPS,
                            );
                        }
                    }
                    v.into_iter().map(|x| margin_quantile(margin, x)).collect()
                }
            };
            for (s, v) in acc.iter_mut().zip(values) {
                *s += v;
            }
        }
        let r = self.fits.len() as f64;
        let coder = self.coders[self.response].as_ref();
        Ok(acc
            .into_iter()
            .map(|s| {
                let q = s / r;
                match coder {
                    Some(c) if self.mode == Mode::Nonparametric => c.dejitter(q),
                    _ => q,
                }
            })
            .collect())
    }

    /// Conditional log-likelihood of `columns` (same layout as the training data).
    pub fn cll(&self, columns: &[Vec<f64>]) -> Result<f64> {
        let n = check_columns(columns, &self.kinds)?;
        let fit = &self.fits[0];
        let response_col: Vec<f64> = match &self.coders[self.response] {
            Some(coder) if self.mode == Mode::Nonparametric => jitter(
                &coder.encode(&columns[self.response]),
                &mut self.jitter.rng(0, self.response),
            ),
            _ => columns[self.response].clone(),
        };
        let covs: Vec<Vec<f64>> = self
            .covariates
            .iter()
            .map(|&c| match &self.coders[c] {
                Some(coder) if self.mode == Mode::Nonparametric => {
                    jitter(&coder.encode(&columns[c]), &mut self.jitter.rng(0, c))
                }
                _ => columns[c].clone(),
            })
            .collect();
        let mut total = 0.0;
        for row in 0..n {
            let pits: Vec<PseudoObs> = covs
                .iter()
                .zip(&fit.covariate_margins)
                .map(|(col, m)| m.pit(col[row]))
                .collect();
            let chain = fit.conditioning_chain(&pits);
            total += fit.row_cll(fit.response_margin.pit(response_col[row]), &chain);
        }
        Ok(total)
    }

    /// Penalized cll on `columns`, larger is better: `cll - p` under AIC and
    /// `cll - p ln(n) / 2` under BIC.
    pub fn penalized_cll(&self, columns: &[Vec<f64>], penalty: Criterion) -> Result<f64> {
        let cll = self.cll(columns)?;
        let n = columns.first().map_or(0, Vec::len);
        Ok(penalty.score(cll, self.params, n))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(MODEL_FORMAT) => {}
            _ => return Err(Error::Parse("not a model document".into())),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(MODEL_VERSION) => {}
            Some(v) => return Err(Error::Parse(format!("unsupported model version {v}"))),
            None => return Err(Error::Parse("missing model version".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn margin_quantile(margin: &ContinuousMargin, v: f64) -> f64 {
    margin.quantile(v)
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Request("no quantile levels given".into()));
    }
    if alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return Err(Error::Request("quantile levels must lie in (0,1)".into()));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Request("quantile levels must be strictly ascending".into()));
    }
    Ok(())
}

/// Deviance-form AIC, `-2 cll + 2 p`.
pub fn aic(cll: f64, params: f64) -> f64 {
    -2.0 * cll + 2.0 * params
}

/// Deviance-form BIC, `-2 cll + ln(n) p`.
pub fn bic(cll: f64, params: f64, n: usize) -> f64 {
    -2.0 * cll + (n as f64).ln() * params
}
