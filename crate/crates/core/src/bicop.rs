//! Parametric bivariate copula families.
//!
//! Every family is exchangeable in its base (0 degree) form, so only the
//! h-function `H(a | b) = dC(a, b)/db` and its inverse need to be written per
//! family. Rotations and the second-given-first direction are derived from
//! those two:
//!
//! | rotation | `C_r(u, v)`                   | `dC_r/dv` at `(u, v)`    |
//! |----------|-------------------------------|--------------------------|
//! | 0        | `C(u, v)`                     | `H(u, v)`                |
//! | 90       | `v - C(1-u, v)`               | `1 - H(1-u, v)`          |
//! | 180      | `u + v - 1 + C(1-u, 1-v)`     | `1 - H(1-u, 1-v)`        |
//! | 270      | `u - C(u, 1-v)`               | `H(u, 1-v)`              |
//!
//! Swapping the arguments of a 90 degree copula yields the 270 degree one and
//! vice versa, which gives the other conditioning direction for free.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{bisect_increasing, brent_max};
use crate::special::{bvn_cdf, debye1, log_add_exp, norm_cdf, norm_quantile};
use crate::stats::kendall_tau;

/// Copula-scale inputs are clamped into `[CLAMP, 1 - CLAMP]` before evaluation.
pub const CLAMP: f64 = 1e-10;

const MLE_TOL: f64 = 1e-6;
const MLE_MAX_ITER: usize = 200;
const TIE_TOL: f64 = 1e-9;
const FRANK_MIN_ABS: f64 = 1e-4;

pub(crate) fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        return 0.5;
    }
    x.clamp(CLAMP, 1.0 - CLAMP)
}

/// Supported one-parameter families. The declaration order is the
/// tie-breaking precedence used by family selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Independence,
    Gaussian,
    Clayton,
    Gumbel,
    Frank,
    Joe,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Independence,
        Family::Gaussian,
        Family::Clayton,
        Family::Gumbel,
        Family::Frank,
        Family::Joe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Gaussian => "gaussian",
            Family::Clayton => "clayton",
            Family::Gumbel => "gumbel",
            Family::Frank => "frank",
            Family::Joe => "joe",
        }
    }

    /// Whether 90/180/270 degree rotations are distinct members.
    pub fn rotatable(self) -> bool {
        matches!(self, Family::Clayton | Family::Gumbel | Family::Joe)
    }

    /// Closed parameter interval. For Frank the open gap `(-1e-4, 1e-4)` is
    /// excluded as well.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Family::Independence => (0.0, 0.0),
            Family::Gaussian => (-0.999, 0.999),
            Family::Clayton => (1e-4, 28.0),
            Family::Gumbel => (1.0 + 1e-4, 17.0),
            Family::Frank => (-35.0, 35.0),
            Family::Joe => (1.0 + 1e-4, 30.0),
        }
    }

    fn parameter_count(self) -> usize {
        usize::from(self != Family::Independence)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidSpec(format!("unknown family '{s}'")))
    }
}

/// Counter-clockwise rotation of a copula density, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Rotation {
    #[default]
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn from_degrees(deg: i64) -> Result<Self> {
        match deg.rem_euclid(360) {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            _ => Err(Error::InvalidSpec(format!("rotation {deg} is not a multiple of 90"))),
        }
    }

    /// Composition of two rotations.
    pub fn then(self, other: Rotation) -> Rotation {
        Rotation::from_degrees(i64::from(self.degrees()) + i64::from(other.degrees()))
            .expect("sum of right angles")
    }

    /// Rotation of the argument-swapped copula.
    fn swapped(self) -> Rotation {
        match self {
            Rotation::R90 => Rotation::R270,
            Rotation::R270 => Rotation::R90,
            r => r,
        }
    }

    /// 90 and 270 degree rotations turn positive dependence into negative.
    pub fn flips_sign(self) -> bool {
        matches!(self, Rotation::R90 | Rotation::R270)
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u16(self.degrees())
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let deg = i64::deserialize(d)?;
        Rotation::from_degrees(deg).map_err(serde::de::Error::custom)
    }
}

/// Which argument is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// `h(u | v) = dC(u, v)/dv`: the first argument given the second.
    FirstGivenSecond,
    /// `h(v | u) = dC(u, v)/du`: the second argument given the first.
    SecondGivenFirst,
}

/// Model-selection criterion, expressed as a score to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Cll,
    #[default]
    Aic,
    Bic,
}

impl Criterion {
    /// Penalized log-likelihood: `ll` for cll, `ll - p` for AIC (i.e. `-AIC/2`),
    /// `ll - p ln(n) / 2` for BIC.
    pub fn score(self, loglik: f64, params: f64, n: usize) -> f64 {
        match self {
            Criterion::Cll => loglik,
            Criterion::Aic => loglik - params,
            Criterion::Bic => loglik - 0.5 * params * (n.max(1) as f64).ln(),
        }
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cll" => Ok(Criterion::Cll),
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            other => Err(Error::Request(format!("unknown criterion '{other}'"))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Cll => "cll",
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
        })
    }
}

/// A fully specified parametric pair-copula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCopula {
    pub family: Family,
    pub rotation: Rotation,
    pub theta: f64,
}

impl Default for PairCopula {
    fn default() -> Self {
        PairCopula::independence()
    }
}

impl PairCopula {
    pub fn new(family: Family, rotation: Rotation, theta: f64) -> Result<Self> {
        let spec = if family == Family::Independence {
            PairCopula::independence()
        } else {
            PairCopula {
                family,
                rotation,
                theta,
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn independence() -> Self {
        PairCopula {
            family: Family::Independence,
            rotation: Rotation::R0,
            theta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.family.rotatable() && self.rotation != Rotation::R0 {
            return Err(Error::InvalidSpec(format!(
                "{} does not take rotation {}",
                self.family,
                self.rotation.degrees()
            )));
        }
        if self.family == Family::Independence {
            return Ok(());
        }
        let (lo, hi) = self.family.bounds();
        if !(self.theta >= lo && self.theta <= hi) {
            return Err(Error::InvalidSpec(format!(
                "{} parameter {} outside [{lo}, {hi}]",
                self.family, self.theta
            )));
        }
        if self.family == Family::Frank && self.theta.abs() < FRANK_MIN_ABS {
            return Err(Error::InvalidSpec(format!(
                "frank parameter {} inside the excluded gap (-1e-4, 1e-4)",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn is_independence(&self) -> bool {
        self.family == Family::Independence
    }

    pub fn parameter_count(&self) -> usize {
        self.family.parameter_count()
    }

    /// Copula distribution function `C(u, v)`.
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return v.min(1.0);
        }
        if v >= 1.0 {
            return u;
        }
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let f = self.family;
        let t = self.theta;
        let c = match self.rotation {
            Rotation::R0 => base_cdf(f, t, u, v),
            Rotation::R90 => v - base_cdf(f, t, 1.0 - u, v),
            Rotation::R180 => u + v - 1.0 + base_cdf(f, t, 1.0 - u, 1.0 - v),
            Rotation::R270 => u - base_cdf(f, t, u, 1.0 - v),
        };
        c.clamp((u + v - 1.0).max(0.0), u.min(v))
    }

    /// Copula density `c(u, v)`; arguments are clamped away from the boundary.
    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        self.ln_pdf(u, v).exp()
    }

    pub fn ln_pdf(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let (a, b) = match self.rotation {
            Rotation::R0 => (u, v),
            Rotation::R90 => (1.0 - u, v),
            Rotation::R180 => (1.0 - u, 1.0 - v),
            Rotation::R270 => (u, 1.0 - v),
        };
        base_ln_pdf(self.family, self.theta, a, b)
    }

    /// h-function. With `FirstGivenSecond`, returns `dC(x, given)/d given`;
    /// with `SecondGivenFirst`, returns `dC(given, x)/d given`.
    pub fn hfunc(&self, x: f64, given: f64, dir: Direction) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let rot = match dir {
            Direction::FirstGivenSecond => self.rotation,
            Direction::SecondGivenFirst => self.rotation.swapped(),
        };
        let (u, v) = (clamp_unit(x), clamp_unit(given));
        let (f, t) = (self.family, self.theta);
        let h = match rot {
            Rotation::R0 => base_h(f, t, u, v),
            Rotation::R90 => 1.0 - base_h(f, t, 1.0 - u, v),
            Rotation::R180 => 1.0 - base_h(f, t, 1.0 - u, 1.0 - v),
            Rotation::R270 => base_h(f, t, u, 1.0 - v),
        };
        h.clamp(0.0, 1.0)
    }

    /// Inverse of [`hfunc`](Self::hfunc) in its first argument.
    pub fn hinv(&self, p: f64, given: f64, dir: Direction) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return 1.0;
        }
        let rot = match dir {
            Direction::FirstGivenSecond => self.rotation,
            Direction::SecondGivenFirst => self.rotation.swapped(),
        };
        let v = clamp_unit(given);
        let (f, t) = (self.family, self.theta);
        let x = match rot {
            Rotation::R0 => base_hinv(f, t, p, v),
            Rotation::R90 => 1.0 - base_hinv(f, t, 1.0 - p, v),
            Rotation::R180 => 1.0 - base_hinv(f, t, 1.0 - p, 1.0 - v),
            Rotation::R270 => base_hinv(f, t, p, 1.0 - v),
        };
        x.clamp(0.0, 1.0)
    }

    /// Kendall's tau implied by the parameter.
    pub fn tau(&self) -> f64 {
        let base = base_tau(self.family, self.theta);
        if self.rotation.flips_sign() {
            -base
        } else {
            base
        }
    }

    /// Parameter matching a given Kendall's tau.
    pub fn from_tau(family: Family, rotation: Rotation, tau: f64) -> Result<Self> {
        let (lo, hi) = attainable_tau(family, rotation);
        let slack = 1e-12;
        if !(tau >= lo - slack && tau <= hi + slack) {
            return Err(Error::TauOutOfRange {
                family: family.name().to_string(),
                tau,
                lo,
                hi,
            });
        }
        if family == Family::Independence {
            return Ok(PairCopula::independence());
        }
        if !family.rotatable() && rotation != Rotation::R0 {
            return Err(Error::InvalidSpec(format!(
                "{family} does not take rotation {}",
                rotation.degrees()
            )));
        }
        let base_tau = if rotation.flips_sign() { -tau } else { tau };
        let (blo, bhi) = attainable_tau(family, Rotation::R0);
        let theta = base_param_from_tau(family, base_tau.clamp(blo, bhi));
        let (plo, phi) = family.bounds();
        PairCopula::new(family, rotation, theta.clamp(plo, phi))
    }

    /// Parameter for `tau`, with `tau` first clamped into the attainable range.
    pub fn from_tau_clamped(family: Family, rotation: Rotation, tau: f64) -> Self {
        let (lo, hi) = attainable_tau(family, rotation);
        let tau = if tau.is_finite() { tau.clamp(lo, hi) } else { 0.5 * (lo + hi) };
        PairCopula::from_tau(family, rotation, tau).unwrap_or_else(|_| PairCopula {
            family,
            rotation,
            theta: if family == Family::Frank { FRANK_MIN_ABS } else { family.bounds().0 },
        })
    }
}

impl fmt::Display for PairCopula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{:.16e}", self.family, self.rotation.degrees(), self.theta)
    }
}

impl FromStr for PairCopula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('/').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidSpec(format!("expected family/rotation/theta, got '{s}'")));
        }
        let family: Family = parts[0].parse()?;
        let deg: i64 = parts[1]
            .parse()
            .map_err(|_| Error::InvalidSpec(format!("bad rotation '{}'", parts[1])))?;
        let theta: f64 = parts[2]
            .parse()
            .map_err(|_| Error::InvalidSpec(format!("bad parameter '{}'", parts[2])))?;
        PairCopula::new(family, Rotation::from_degrees(deg)?, theta)
    }
}

/// Kendall's tau range reachable by the family within its parameter bounds.
pub fn attainable_tau(family: Family, rotation: Rotation) -> (f64, f64) {
    let (lo, hi) = match family {
        Family::Independence => (0.0, 0.0),
        Family::Frank => (base_tau(family, -35.0), base_tau(family, 35.0)),
        _ => {
            let (a, b) = family.bounds();
            (base_tau(family, a), base_tau(family, b))
        }
    };
    if rotation.flips_sign() && family.rotatable() {
        (-hi, -lo)
    } else {
        (lo, hi)
    }
}

// ---------------------------------------------------------------------------
// base (unrotated) families

fn clayton_ln_t(theta: f64, a: f64, b: f64) -> f64 {
    // ln(a^-theta + b^-theta - 1)
    let x = -theta * a.ln();
    let y = -theta * b.ln();
    if x.max(y) < 700.0 {
        (x.exp_m1() + y.exp_m1()).ln_1p()
    } else {
        let m = x.max(y);
        m + ((x - m).exp() + (y - m).exp() - (-m).exp()).ln()
    }
}

fn gumbel_parts(theta: f64, a: f64, b: f64) -> (f64, f64, f64, f64) {
    let lx = (-a.ln()).ln();
    let ly = (-b.ln()).ln();
    let ln_s = log_add_exp(theta * lx, theta * ly);
    let big_a = (ln_s / theta).exp();
    (lx, ly, ln_s, big_a)
}

fn joe_ln_s(theta: f64, abar: f64, bbar: f64) -> (f64, f64) {
    // S = x + y (1 - x) with x = abar^theta, y = bbar^theta
    let lx = theta * abar.ln();
    let ly = theta * bbar.ln();
    let ln_one_minus_x = (-lx.exp_m1()).ln();
    (log_add_exp(lx, ly + ln_one_minus_x), ln_one_minus_x)
}

fn base_cdf(f: Family, theta: f64, a: f64, b: f64) -> f64 {
    match f {
        Family::Independence => a * b,
        Family::Gaussian => bvn_cdf(norm_quantile(a), norm_quantile(b), theta),
        Family::Clayton => (-clayton_ln_t(theta, a, b) / theta).exp(),
        Family::Gumbel => {
            let (_, _, _, big_a) = gumbel_parts(theta, a, b);
            (-big_a).exp()
        }
        Family::Frank => {
            if a + b > 1.0 {
                return a + b - 1.0 + base_cdf(f, theta, 1.0 - a, 1.0 - b);
            }
            let et = (-theta).exp_m1();
            let ea = (-theta * a).exp_m1();
            let eb = (-theta * b).exp_m1();
            -(ea * eb / et).ln_1p() / theta
        }
        Family::Joe => {
            let (ln_s, _) = joe_ln_s(theta, 1.0 - a, 1.0 - b);
            -(ln_s / theta).exp_m1()
        }
    }
}

fn base_ln_pdf(f: Family, theta: f64, a: f64, b: f64) -> f64 {
    match f {
        Family::Independence => 0.0,
        Family::Gaussian => {
            let x = norm_quantile(a);
            let y = norm_quantile(b);
            let r2 = theta * theta;
            -0.5 * (1.0 - r2).ln() - (r2 * (x * x + y * y) - 2.0 * theta * x * y) / (2.0 * (1.0 - r2))
        }
        Family::Clayton => {
            let ln_t = clayton_ln_t(theta, a, b);
            theta.ln_1p() + (-1.0 - theta) * (a.ln() + b.ln()) + (-2.0 - 1.0 / theta) * ln_t
        }
        Family::Gumbel => {
            let (lx, ly, ln_s, big_a) = gumbel_parts(theta, a, b);
            -big_a - a.ln() - b.ln()
                + (theta - 1.0) * (lx + ly)
                + (1.0 / theta - 2.0) * ln_s
                + (big_a + theta - 1.0).ln()
        }
        Family::Frank => {
            if a + b > 1.0 {
                return base_ln_pdf(f, theta, 1.0 - a, 1.0 - b);
            }
            let et = (-theta).exp_m1();
            let ea = (-theta * a).exp_m1();
            let eb = (-theta * b).exp_m1();
            let d = et + ea * eb;
            (-theta * et).ln() - theta * (a + b) - 2.0 * d.abs().ln()
        }
        Family::Joe => {
            let abar = 1.0 - a;
            let bbar = 1.0 - b;
            let (ln_s, _) = joe_ln_s(theta, abar, bbar);
            (1.0 / theta - 2.0) * ln_s
                + (theta - 1.0) * (abar.ln() + bbar.ln())
                + (theta - 1.0 + ln_s.exp()).ln()
        }
    }
}

/// `H(a | b) = dC(a, b)/db` for the unrotated family.
fn base_h(f: Family, theta: f64, a: f64, b: f64) -> f64 {
    match f {
        Family::Independence => a,
        Family::Gaussian => {
            let x = norm_quantile(a);
            let y = norm_quantile(b);
            norm_cdf((x - theta * y) / (1.0 - theta * theta).sqrt())
        }
        Family::Clayton => {
            let ln_t = clayton_ln_t(theta, a, b);
            ((-theta - 1.0) * b.ln() + (-1.0 - 1.0 / theta) * ln_t).exp()
        }
        Family::Gumbel => {
            let (_, ly, ln_s, big_a) = gumbel_parts(theta, a, b);
            (-big_a + (1.0 - theta) / theta * ln_s + (theta - 1.0) * ly - b.ln()).exp()
        }
        Family::Frank => {
            if a + b > 1.0 {
                return 1.0 - base_h(f, theta, 1.0 - a, 1.0 - b);
            }
            let et = (-theta).exp_m1();
            let ea = (-theta * a).exp_m1();
            let eb = (-theta * b).exp_m1();
            (-theta * b).exp() * ea / (et + ea * eb)
        }
        Family::Joe => {
            let abar = 1.0 - a;
            let bbar = 1.0 - b;
            let (ln_s, ln_one_minus_x) = joe_ln_s(theta, abar, bbar);
            ((theta - 1.0) * bbar.ln() + ln_one_minus_x + (1.0 / theta - 1.0) * ln_s).exp()
        }
    }
}

/// Solves `H(a | b) = p` for `a`.
fn base_hinv(f: Family, theta: f64, p: f64, b: f64) -> f64 {
    match f {
        Family::Independence => p,
        Family::Gaussian => {
            let y = norm_quantile(b);
            norm_cdf(norm_quantile(p) * (1.0 - theta * theta).sqrt() + theta * y)
        }
        Family::Clayton => {
            // t = (p b^(theta+1))^(-theta/(1+theta)) = a^-theta + b^-theta - 1
            let ln_t = -theta / (1.0 + theta) * (p.ln() + (theta + 1.0) * b.ln());
            let y = -theta * b.ln();
            if y >= ln_t {
                return 1.0;
            }
            // ln(a^-theta - 1) = ln(t - b^-theta)
            let ln_excess = ln_t + (-(y - ln_t).exp_m1()).ln();
            let ln_a_pow = if ln_excess > 35.0 {
                ln_excess + (-ln_excess).exp()
            } else {
                ln_excess.exp().ln_1p()
            };
            (-ln_a_pow / theta).exp()
        }
        Family::Gumbel | Family::Frank | Family::Joe => {
            bisect_increasing(|a| base_h(f, theta, clamp_unit(a), b), p, 0.0, 1.0, 1e-16, 200)
        }
    }
}

fn base_tau(f: Family, theta: f64) -> f64 {
    match f {
        Family::Independence => 0.0,
        Family::Gaussian => 2.0 / std::f64::consts::PI * theta.asin(),
        Family::Clayton => theta / (theta + 2.0),
        Family::Gumbel => 1.0 - 1.0 / theta,
        Family::Frank => {
            if theta.abs() < 1e-2 {
                let t2 = theta * theta;
                theta / 9.0 - theta * t2 / 900.0 + theta * t2 * t2 / 52920.0
            } else {
                1.0 - 4.0 / theta * (1.0 - debye1(theta))
            }
        }
        Family::Joe => joe_tau(theta),
    }
}

fn joe_tau_direct(theta: f64) -> f64 {
    use statrs::function::gamma::digamma;
    1.0 + 2.0 / (2.0 - theta) * (digamma(2.0) - digamma(2.0 / theta + 1.0))
}

fn joe_tau(theta: f64) -> f64 {
    // removable singularity at theta = 2
    let gap = 1e-4;
    if (theta - 2.0).abs() < gap {
        let lo = joe_tau_direct(2.0 - gap);
        let hi = joe_tau_direct(2.0 + gap);
        let w = (theta - (2.0 - gap)) / (2.0 * gap);
        return lo + w * (hi - lo);
    }
    joe_tau_direct(theta)
}

fn base_param_from_tau(f: Family, tau: f64) -> f64 {
    match f {
        Family::Independence => 0.0,
        Family::Gaussian => (std::f64::consts::FRAC_PI_2 * tau).sin(),
        Family::Clayton => 2.0 * tau / (1.0 - tau),
        Family::Gumbel => 1.0 / (1.0 - tau),
        Family::Frank => {
            let target = tau.abs();
            if target <= base_tau(f, FRANK_MIN_ABS) {
                return FRANK_MIN_ABS.copysign(if tau < 0.0 { -1.0 } else { 1.0 });
            }
            let theta = bisect_increasing(|t| base_tau(f, t), target, FRANK_MIN_ABS, 35.0, 1e-13, 200);
            if tau < 0.0 {
                -theta
            } else {
                theta
            }
        }
        Family::Joe => bisect_increasing(joe_tau, tau, 1.0 + 1e-4, 30.0, 1e-13, 200),
    }
}

// ---------------------------------------------------------------------------
// estimation

/// Outcome of fitting a single family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedPair {
    pub copula: PairCopula,
    pub loglik: f64,
}

/// Maximizes `loglik` over the parameter interval of `(family, rotation)`,
/// starting from the parameter matching `init_tau`.
pub(crate) fn fit_by_loglik<L>(family: Family, rotation: Rotation, init_tau: f64, loglik: L) -> Result<FittedPair>
where
    L: Fn(&PairCopula) -> f64,
{
    if family == Family::Independence {
        let c = PairCopula::independence();
        return Ok(FittedPair {
            copula: c,
            loglik: loglik(&c),
        });
    }
    let (lo, hi) = family.bounds();
    let start = PairCopula::from_tau_clamped(family, rotation, init_tau).theta;
    let objective = |theta: f64| {
        let theta = if family == Family::Frank && theta.abs() < FRANK_MIN_ABS {
            FRANK_MIN_ABS.copysign(if theta < 0.0 { -1.0 } else { 1.0 })
        } else {
            theta
        };
        let c = PairCopula {
            family,
            rotation,
            theta,
        };
        let ll = loglik(&c);
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    };
    let best = brent_max(objective, lo, hi, start, MLE_TOL, MLE_MAX_ITER);
    let mut theta = best.x.clamp(lo, hi);
    if family == Family::Frank && theta.abs() < FRANK_MIN_ABS {
        theta = FRANK_MIN_ABS.copysign(if theta < 0.0 { -1.0 } else { 1.0 });
    }
    if !best.converged {
        return Err(Error::FitFailed {
            iterations: best.iterations,
            best_theta: theta,
            best_value: best.value,
        });
    }
    let copula = PairCopula::new(family, rotation, theta)?;
    Ok(FittedPair {
        copula,
        loglik: loglik(&copula),
    })
}

/// Continuous log-likelihood `sum log c(u_i, v_i)`.
pub fn loglik_continuous(copula: &PairCopula, data: &[(f64, f64)]) -> f64 {
    if copula.is_independence() {
        return 0.0;
    }
    data.iter().map(|&(u, v)| copula.ln_pdf(u, v)).sum()
}

fn check_continuous_data(data: &[(f64, f64)]) -> Result<()> {
    if data.len() < 10 {
        return Err(Error::Precondition(format!(
            "at least 10 pairs required, got {}",
            data.len()
        )));
    }
    if data
        .iter()
        .any(|&(u, v)| !(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0))
    {
        return Err(Error::Precondition("pairs must lie strictly inside (0,1)^2".into()));
    }
    Ok(())
}

pub(crate) fn sample_tau(data: &[(f64, f64)]) -> f64 {
    let (u, v): (Vec<f64>, Vec<f64>) = data.iter().copied().unzip();
    kendall_tau(&u, &v)
}

/// Maximum-likelihood fit of one family to continuous copula data.
pub fn fit_mle_continuous(family: Family, rotation: Rotation, data: &[(f64, f64)]) -> Result<PairCopula> {
    check_continuous_data(data)?;
    let tau = sample_tau(data);
    fit_by_loglik(family, rotation, tau, |c| loglik_continuous(c, data)).map(|f| f.copula)
}

/// A family/rotation pair eligible for selection.
pub type Candidate = (Family, Rotation);

/// All families with all admissible rotations, in precedence order.
pub fn default_candidates() -> Vec<Candidate> {
    let mut out = Vec::new();
    for f in Family::ALL {
        if f.rotatable() {
            out.extend(Rotation::ALL.iter().map(|&r| (f, r)));
        } else {
            out.push((f, Rotation::R0));
        }
    }
    out
}

/// Parses a comma-separated candidate list such as `clayton,gumbel:180,frank`.
/// A rotatable family without an explicit rotation expands to all four.
pub fn parse_candidates(text: &str) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, rot) = match item.split_once(':') {
            Some((n, r)) => (n, Some(r)),
            None => (item, None),
        };
        let family: Family = name.parse()?;
        match rot {
            Some(r) => {
                let deg: i64 = r
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidSpec(format!("bad rotation '{r}'")))?;
                let rotation = Rotation::from_degrees(deg)?;
                if !family.rotatable() && rotation != Rotation::R0 {
                    return Err(Error::InvalidSpec(format!("{family} cannot be rotated")));
                }
                out.push((family, rotation));
            }
            None if family.rotatable() => out.extend(Rotation::ALL.iter().map(|&r| (family, r))),
            None => out.push((family, Rotation::R0)),
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidSpec("empty candidate set".into()));
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Outcome of family selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub copula: PairCopula,
    pub loglik: f64,
    /// Penalized score (larger is better) under the requested criterion.
    pub score: f64,
    /// Set when every candidate fit failed and independence was substituted.
    pub fallback: bool,
}

/// Whether a candidate's dependence sign is compatible with the sample tau.
/// Rotations pointing the wrong way are skipped for the asymmetric families.
fn sign_compatible(candidate: Candidate, tau: f64) -> bool {
    let (family, rotation) = candidate;
    if !family.rotatable() {
        return true;
    }
    if tau >= 0.0 {
        !rotation.flips_sign()
    } else {
        rotation.flips_sign()
    }
}

/// Generic selection loop shared by the continuous and the mixed likelihoods.
pub(crate) fn select_with<L>(
    candidates: &[Candidate],
    criterion: Criterion,
    n: usize,
    tau: f64,
    loglik: L,
) -> Result<Selection>
where
    L: Fn(&PairCopula) -> f64 + Sync,
{
    if candidates.is_empty() {
        return Err(Error::Precondition("candidate set is empty".into()));
    }
    let mut ordered: Vec<Candidate> = candidates.to_vec();
    ordered.sort();
    ordered.dedup();
    let eligible: Vec<Candidate> = ordered
        .iter()
        .copied()
        .filter(|&c| sign_compatible(c, tau))
        .collect();
    let eligible = if eligible.is_empty() { ordered } else { eligible };

    let mut best: Option<Selection> = None;
    for (family, rotation) in eligible {
        let Ok(fit) = fit_by_loglik(family, rotation, tau, &loglik) else {
            continue;
        };
        if !fit.loglik.is_finite() {
            continue;
        }
        let score = criterion.score(fit.loglik, fit.copula.parameter_count() as f64, n);
        let better = match &best {
            None => true,
            Some(b) => score > b.score + TIE_TOL,
        };
        if better {
            best = Some(Selection {
                copula: fit.copula,
                loglik: fit.loglik,
                score,
                fallback: false,
            });
        }
    }
    Ok(best.unwrap_or_else(|| {
        let c = PairCopula::independence();
        let ll = loglik(&c);
        Selection {
            copula: c,
            loglik: ll,
            score: criterion.score(ll, 0.0, n),
            fallback: true,
        }
    }))
}

/// Selects the best family for continuous copula data.
pub fn select_family(data: &[(f64, f64)], criterion: Criterion, candidates: &[Candidate]) -> Result<Selection> {
    check_continuous_data(data)?;
    let tau = sample_tau(data);
    select_with(candidates, criterion, data.len(), tau, |c| loglik_continuous(c, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clayton(theta: f64) -> PairCopula {
        PairCopula::new(Family::Clayton, Rotation::R0, theta).unwrap()
    }

    #[test]
    fn independence_examples() {
        let c = PairCopula::independence();
        assert!((c.cdf(0.3, 0.7) - 0.21).abs() < 1e-15);
        assert_eq!(c.pdf(0.3, 0.7), 1.0);
        assert_eq!(c.hfunc(0.4, 0.9, Direction::FirstGivenSecond), 0.4);
        assert_eq!(c.hinv(0.25, 0.6, Direction::FirstGivenSecond), 0.25);
        assert_eq!(c.tau(), 0.0);
    }

    #[test]
    fn clayton_closed_forms() {
        let c = clayton(1.0);
        assert!((c.cdf(0.5, 0.5) - 1.0 / 3.0).abs() < 1e-14);
        assert!((c.hfunc(0.5, 0.5, Direction::FirstGivenSecond) - 4.0 / 9.0).abs() < 1e-14);
        assert!((c.hinv(4.0 / 9.0, 0.5, Direction::FirstGivenSecond) - 0.5).abs() < 1e-12);
        assert!((c.tau() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_zero_is_uniform_density() {
        let g = PairCopula::new(Family::Gaussian, Rotation::R0, 0.0).unwrap();
        assert!((g.pdf(0.2, 0.9) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn boundary_values_are_exact() {
        for (f, r) in default_candidates() {
            let (lo, hi) = f.bounds();
            let theta = if f == Family::Frank { 3.0 } else { 0.5 * (lo + hi) };
            let c = PairCopula::new(f, r, theta).unwrap();
            assert_eq!(c.cdf(0.42, 1.0), 0.42);
            assert_eq!(c.cdf(1.0, 0.42), 0.42);
            assert_eq!(c.cdf(0.42, 0.0), 0.0);
            assert_eq!(c.hfunc(1.0, 0.3, Direction::FirstGivenSecond), 1.0);
            assert_eq!(c.hfunc(0.0, 0.3, Direction::SecondGivenFirst), 0.0);
        }
    }

    #[test]
    fn rejects_out_of_bounds_parameters() {
        assert!(PairCopula::new(Family::Clayton, Rotation::R0, 30.0).is_err());
        assert!(PairCopula::new(Family::Gaussian, Rotation::R90, 0.3).is_err());
        assert!(PairCopula::new(Family::Frank, Rotation::R0, 1e-6).is_err());
        assert!(PairCopula::new(Family::Gumbel, Rotation::R0, 1.0).is_err());
    }

    #[test]
    fn tau_relations() {
        let g = PairCopula::from_tau(Family::Gaussian, Rotation::R0, 0.5).unwrap();
        assert!((g.theta - (std::f64::consts::FRAC_PI_4).sin()).abs() < 1e-15);
        let c = PairCopula::from_tau(Family::Clayton, Rotation::R0, 1.0 / 3.0).unwrap();
        assert!((c.theta - 1.0).abs() < 1e-14);
        let r = PairCopula::from_tau(Family::Clayton, Rotation::R90, -0.5).unwrap();
        assert!((r.theta - 2.0).abs() < 1e-12);
        assert!(PairCopula::from_tau(Family::Gumbel, Rotation::R0, -0.2).is_err());
        // Joe at theta = 2 lies on the removable singularity.
        let j = PairCopula::new(Family::Joe, Rotation::R0, 2.0).unwrap();
        let j2 = PairCopula::from_tau(Family::Joe, Rotation::R0, j.tau()).unwrap();
        assert!((j2.theta - 2.0).abs() < 1e-6);
    }

    #[test]
    fn serialization_text_round_trip() {
        let c = PairCopula::new(Family::Gumbel, Rotation::R270, 1.234_567_890_123_456_7).unwrap();
        let text = c.to_string();
        let back: PairCopula = text.parse().unwrap();
        assert_eq!(back, c);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"gumbel\"") && json.contains("270"));
        let back: PairCopula = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn too_few_pairs_is_precondition_error() {
        let data = vec![(0.2, 0.3); 5];
        assert!(matches!(
            fit_mle_continuous(Family::Clayton, Rotation::R0, &data),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn single_candidate_independence() {
        let data: Vec<(f64, f64)> = (1..40).map(|i| (i as f64 / 40.0, ((i * 7) % 40) as f64 / 40.0 + 0.01)).collect();
        let s = select_family(&data, Criterion::Aic, &[(Family::Independence, Rotation::R0)]).unwrap();
        assert!(s.copula.is_independence());
    }

    #[test]
    fn candidate_parsing() {
        let c = parse_candidates("clayton:90, frank").unwrap();
        assert_eq!(c, vec![(Family::Clayton, Rotation::R90), (Family::Frank, Rotation::R0)]);
        assert_eq!(parse_candidates("joe").unwrap().len(), 4);
        assert!(parse_candidates("gaussian:90").is_err());
        assert_eq!(default_candidates().len(), 15);
    }
}
