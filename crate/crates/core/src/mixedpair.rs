//! Pair-copula likelihood and conditional transforms with discrete margins.
//!
//! A discrete pseudo-observation is a cell `(uminus, u]`; likelihood terms are
//! differences of the copula CDF or its h-functions over those cells.

use crate::bicop::{fit_by_loglik, select_with, Candidate, Criterion, Direction, PairCopula, Selection};
use crate::error::{Error, Result};
use crate::stats::kendall_tau;
use crate::margins::PseudoObs;

/// Floor applied to masses and densities before taking logs.
pub const LOG_FLOOR: f64 = 1e-300;
/// Smallest conditioning jump accepted by [`cond_transform`].
pub const MIN_JUMP: f64 = 1e-12;
/// Negative masses smaller than this in magnitude are treated as rounding noise.
const MASS_TOL: f64 = 1e-10;

/// One likelihood term and whether its argument had to be floored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub value: f64,
    pub clamped: bool,
}

fn floored_log(x: f64) -> PairTerm {
    if x > LOG_FLOOR {
        PairTerm {
            value: x.ln(),
            clamped: false,
        }
    } else {
        PairTerm {
            value: LOG_FLOOR.ln(),
            // tiny but nonnegative masses are legitimate, only negatives count
            clamped: x < -MASS_TOL,
        }
    }
}

/// Log density, log mass or log of the mixed density-mass of a pair.
pub fn pair_term(c: &PairCopula, a: &PseudoObs, b: &PseudoObs) -> PairTerm {
    match (a.discrete, b.discrete) {
        (false, false) => {
            let v = c.ln_pdf(a.u, b.u);
            if v.is_finite() {
                PairTerm {
                    value: v,
                    clamped: false,
                }
            } else {
                floored_log(v.exp())
            }
        }
        (true, false) => {
            let d = Direction::FirstGivenSecond;
            floored_log(c.hfunc(a.u, b.u, d) - c.hfunc(a.uminus, b.u, d))
        }
        (false, true) => {
            let d = Direction::SecondGivenFirst;
            floored_log(c.hfunc(b.u, a.u, d) - c.hfunc(b.uminus, a.u, d))
        }
        (true, true) => floored_log(
            c.cdf(a.u, b.u) - c.cdf(a.uminus, b.u) - c.cdf(a.u, b.uminus) + c.cdf(a.uminus, b.uminus),
        ),
    }
}

pub fn pair_loglik_term(c: &PairCopula, a: &PseudoObs, b: &PseudoObs) -> f64 {
    pair_term(c, a, b).value
}

/// Pair term divided by the marginal masses of its discrete sides, so that the
/// independence copula contributes zero.
pub fn pair_cond_term(c: &PairCopula, a: &PseudoObs, b: &PseudoObs) -> f64 {
    let mut v = pair_loglik_term(c, a, b);
    for p in [a, b] {
        if p.discrete {
            v -= p.jump().max(LOG_FLOOR).ln();
        }
    }
    v
}

/// Summed log-likelihood with the number of floored terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedLoglik {
    pub value: f64,
    pub clamps: usize,
}

pub fn mixed_loglik(c: &PairCopula, data: &[(PseudoObs, PseudoObs)]) -> MixedLoglik {
    let mut out = MixedLoglik { value: 0.0, clamps: 0 };
    for (a, b) in data {
        let t = pair_term(c, a, b);
        out.value += t.value;
        out.clamps += usize::from(t.clamped);
    }
    out
}

fn check_mixed_data(data: &[(PseudoObs, PseudoObs)]) -> Result<()> {
    if data.len() < 10 {
        return Err(Error::Precondition(format!(
            "at least 10 pairs required, got {}",
            data.len()
        )));
    }
    if data.iter().any(|(a, b)| !a.is_valid() || !b.is_valid()) {
        return Err(Error::Precondition("invalid pseudo-observation".into()));
    }
    for side in 0..2 {
        let pick = |p: &(PseudoObs, PseudoObs)| if side == 0 { p.0 } else { p.1 };
        let first = pick(&data[0]);
        if data.iter().all(|p| {
            let q = pick(p);
            q.u == first.u && q.uminus == first.uminus
        }) {
            return Err(Error::DegenerateMargin(format!("margin {} is constant", side + 1)));
        }
    }
    Ok(())
}

fn mixed_tau(data: &[(PseudoObs, PseudoObs)]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = data
        .iter()
        .map(|(a, b)| (0.5 * (a.u + a.uminus), 0.5 * (b.u + b.uminus)))
        .unzip();
    kendall_tau(&x, &y)
}

/// Maximum-likelihood fit of one family and rotation to mixed pairs.
pub fn fit_mixed(
    family: crate::bicop::Family,
    rotation: crate::bicop::Rotation,
    data: &[(PseudoObs, PseudoObs)],
) -> Result<PairCopula> {
    check_mixed_data(data)?;
    let tau = mixed_tau(data);
    fit_by_loglik(family, rotation, tau, |c| mixed_loglik(c, data).value).map(|f| f.copula)
}

/// Family selection on mixed pairs, same rules as the continuous selector.
pub fn select_mixed(
    data: &[(PseudoObs, PseudoObs)],
    criterion: Criterion,
    candidates: &[Candidate],
) -> Result<Selection> {
    check_mixed_data(data)?;
    let tau = mixed_tau(data);
    select_with(candidates, criterion, data.len(), tau, |c| mixed_loglik(c, data).value)
}

/// Next-tree pseudo-observation of `target` conditional on `given`.
///
/// `dir` says which copula argument `target` occupies, as in
/// [`PairCopula::hfunc`].
pub fn cond_transform(c: &PairCopula, target: &PseudoObs, given: &PseudoObs, dir: Direction) -> Result<PseudoObs> {
    let (mut u, mut um) = if given.discrete {
        let jump = given.jump();
        if jump < MIN_JUMP {
            return Err(Error::DegenerateConditioner(jump));
        }
        let cdf = |t: f64, g: f64| match dir {
            Direction::FirstGivenSecond => c.cdf(t, g),
            Direction::SecondGivenFirst => c.cdf(g, t),
        };
        let q = |t: f64| (cdf(t, given.u) - cdf(t, given.uminus)) / jump;
        if target.discrete {
            (q(target.u), q(target.uminus))
        } else {
            let v = q(target.u);
            (v, v)
        }
    } else {
        let h = c.hfunc(target.u, given.u, dir);
        let hm = if target.discrete {
            c.hfunc(target.uminus, given.u, dir)
        } else {
            h
        };
        (h, hm)
    };
    u = u.clamp(0.0, 1.0);
    um = um.clamp(0.0, u);
    if !target.discrete {
        um = u;
    }
    Ok(PseudoObs {
        u,
        uminus: um,
        discrete: target.discrete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bicop::{default_candidates, fit_mle_continuous, loglik_continuous, Family, Rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clayton1() -> PairCopula {
        PairCopula::new(Family::Clayton, Rotation::R0, 1.0).unwrap()
    }

    fn clayton_cdf(u: f64, v: f64) -> f64 {
        1.0 / (1.0 / u + 1.0 / v - 1.0)
    }

    #[test]
    fn independence_examples() {
        let ind = PairCopula::independence();
        let a = PseudoObs::discrete(0.75, 0.25);
        let b = PseudoObs::discrete(0.6, 0.2);
        assert!((pair_loglik_term(&ind, &a, &b).exp() - 0.2).abs() < 1e-14);
        let bc = PseudoObs::continuous(0.3);
        assert!((pair_loglik_term(&ind, &a, &bc).exp() - 0.5).abs() < 1e-14);
        assert!((pair_loglik_term(&ind, &bc, &a).exp() - 0.5).abs() < 1e-14);
        assert!(pair_cond_term(&ind, &a, &b).abs() < 1e-14);
        for (t, g) in [(a, b), (bc, a), (a, bc)] {
            for dir in [Direction::FirstGivenSecond, Direction::SecondGivenFirst] {
                let out = cond_transform(&ind, &t, &g, dir).unwrap();
                assert!((out.u - t.u).abs() < 1e-14 && (out.uminus - t.uminus).abs() < 1e-14);
                assert_eq!(out.discrete, t.discrete);
            }
        }
    }

    #[test]
    fn clayton_binomial_rectangles_sum_to_one() {
        let cells = [(0.0, 0.25), (0.25, 0.75), (0.75, 1.0)];
        let c = clayton1();
        let mut total = 0.0;
        for &(am, au) in &cells {
            for &(bm, bu) in &cells {
                let m = pair_loglik_term(&c, &PseudoObs::discrete(au, am), &PseudoObs::discrete(bu, bm)).exp();
                // independent oracle: closed-form Clayton CDF differences
                let cc = |x: f64, y: f64| if x == 0.0 || y == 0.0 { 0.0 } else { clayton_cdf(x, y) };
                let oracle = cc(au, bu) - cc(am, bu) - cc(au, bm) + cc(am, bm);
                assert!((m - oracle).abs() < 1e-12);
                total += m;
            }
        }
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rectangle_masses_sum_to_one_for_all_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cuts = [0.0, 0.1, 0.35, 0.5, 0.8, 1.0];
        for (family, rotation) in default_candidates() {
            let (lo, hi) = family.bounds();
            for _ in 0..50 {
                let Ok(c) = PairCopula::new(family, rotation, rng.random_range(lo..=hi)) else {
                    continue;
                };
                let mut total = 0.0;
                for i in 1..cuts.len() {
                    for j in 1..cuts.len() {
                        let a = PseudoObs::discrete(cuts[i], cuts[i - 1]);
                        let b = PseudoObs::discrete(cuts[j], cuts[j - 1]);
                        let m = c.cdf(a.u, b.u) - c.cdf(a.uminus, b.u) - c.cdf(a.u, b.uminus)
                            + c.cdf(a.uminus, b.uminus);
                        assert!(m >= -1e-10, "{c}: mass {m}");
                        total += m;
                    }
                }
                assert!((total - 1.0).abs() < 1e-8, "{c}: total {total}");
            }
        }
    }

    #[test]
    fn continuous_transform_matches_hfunc() {
        let c = clayton1();
        let out = cond_transform(
            &c,
            &PseudoObs::continuous(0.5),
            &PseudoObs::continuous(0.5),
            Direction::FirstGivenSecond,
        )
        .unwrap();
        assert!((out.u - 4.0 / 9.0).abs() < 1e-14);
        assert_eq!(out.u, out.uminus);
        assert!(!out.discrete);
    }

    #[test]
    fn discrete_given_difference_quotient() {
        let c = clayton1();
        let out = cond_transform(
            &c,
            &PseudoObs::continuous(0.5),
            &PseudoObs::discrete(0.75, 0.25),
            Direction::FirstGivenSecond,
        )
        .unwrap();
        let expect = (clayton_cdf(0.5, 0.75) - clayton_cdf(0.5, 0.25)) / 0.5;
        assert!((out.u - expect).abs() < 1e-14);
    }

    #[test]
    fn difference_quotient_converges_quadratically() {
        for (family, rotation) in default_candidates() {
            if family == Family::Independence {
                continue;
            }
            let tau = if rotation.flips_sign() { -0.4 } else { 0.4 };
            let c = PairCopula::from_tau(family, rotation, tau).unwrap();
            let (t, v) = (0.4, 0.55);
            for dir in [Direction::FirstGivenSecond, Direction::SecondGivenFirst] {
                let h = c.hfunc(t, v, dir);
                let err = |d: f64| {
                    let g = PseudoObs::discrete(v + d, v - d);
                    (cond_transform(&c, &PseudoObs::continuous(t), &g, dir).unwrap().u - h).abs()
                };
                let (e1, e2) = (err(1e-2), err(1e-3));
                assert!(e2 < 1e-5, "{c}: err {e2}");
                if e1 > 1e-9 {
                    let ratio = e1 / e2;
                    assert!((50.0..200.0).contains(&ratio), "{c}: ratio {ratio}");
                }
            }
        }
    }

    #[test]
    fn degenerate_conditioner_is_an_error() {
        let g = PseudoObs::discrete(0.5, 0.5 - 1e-13);
        let r = cond_transform(&clayton1(), &PseudoObs::continuous(0.3), &g, Direction::FirstGivenSecond);
        assert!(matches!(r, Err(Error::DegenerateConditioner(_))));
    }

    #[test]
    fn ordering_invariant_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for (family, rotation) in default_candidates() {
            let (lo, hi) = family.bounds();
            for _ in 0..100 {
                let Ok(c) = PairCopula::new(family, rotation, rng.random_range(lo..=hi)) else {
                    continue;
                };
                let mut cell = || {
                    let a: f64 = rng.random();
                    let b: f64 = rng.random();
                    PseudoObs::discrete(a.max(b), a.min(b))
                };
                let (t, g) = (cell(), cell());
                if g.jump() < MIN_JUMP {
                    continue;
                }
                for dir in [Direction::FirstGivenSecond, Direction::SecondGivenFirst] {
                    let out = cond_transform(&c, &t, &g, dir).unwrap();
                    assert!(out.is_valid(), "{c}: {out:?}");
                }
            }
        }
    }

    fn clayton_sample(rng: &mut ChaCha8Rng, theta: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random_range(1e-12..1.0);
                let w: f64 = rng.random_range(1e-12..1.0);
                // conditional inversion of the Clayton h-function
                let v = ((w.powf(-theta / (1.0 + theta)) - 1.0) * u.powf(-theta) + 1.0).powf(-1.0 / theta);
                (u, v)
            })
            .collect()
    }

    #[test]
    fn all_continuous_reduces_to_continuous_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let raw = clayton_sample(&mut rng, 2.0, 300);
        let mixed: Vec<_> = raw
            .iter()
            .map(|&(u, v)| (PseudoObs::continuous(u), PseudoObs::continuous(v)))
            .collect();
        for (family, rotation) in default_candidates() {
            let (lo, hi) = family.bounds();
            let Ok(c) = PairCopula::new(family, rotation, 0.3 * lo + 0.7 * hi.min(lo + 3.0)) else {
                continue;
            };
            for (&(u, v), (a, b)) in raw.iter().zip(&mixed) {
                let d = pair_loglik_term(&c, a, b) - if c.is_independence() { 0.0 } else { c.ln_pdf(u, v) };
                assert!(d.abs() < 1e-12);
            }
            let total = mixed_loglik(&c, &mixed).value;
            assert!((total - loglik_continuous(&c, &raw)).abs() < 1e-9);
        }
        let a = fit_mixed(Family::Clayton, Rotation::R0, &mixed).unwrap();
        let b = fit_mle_continuous(Family::Clayton, Rotation::R0, &raw).unwrap();
        assert!((a.theta - b.theta).abs() < 1e-9);
    }

    #[test]
    fn binomial_discretized_clayton_is_recovered() {
        use statrs::distribution::{Binomial, Discrete, DiscreteCDF};
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let raw = clayton_sample(&mut rng, 1.0, 2000);
        let binom = Binomial::new(0.5, 8).unwrap();
        let cell = |u: f64| {
            let k = (0..=8u64).find(|&k| binom.cdf(k) >= u).unwrap_or(8);
            let up = binom.cdf(k);
            PseudoObs::discrete(up, up - binom.pmf(k))
        };
        let data: Vec<_> = raw.iter().map(|&(u, v)| (cell(u), cell(v))).collect();
        let fit = fit_mixed(Family::Clayton, Rotation::R0, &data).unwrap();
        assert!((0.7..=1.3).contains(&fit.theta), "theta {}", fit.theta);
        assert_eq!(mixed_loglik(&fit, &data).clamps, 0);
    }

    #[test]
    fn constant_margin_is_rejected() {
        let data: Vec<_> = (0..20)
            .map(|i| (PseudoObs::discrete(0.5, 0.0), PseudoObs::continuous((i as f64 + 0.5) / 20.0)))
            .collect();
        assert!(matches!(
            fit_mixed(Family::Frank, Rotation::R0, &data),
            Err(Error::DegenerateMargin(_))
        ));
        assert!(fit_mixed(Family::Frank, Rotation::R0, &data[..5]).is_err());
    }
}
