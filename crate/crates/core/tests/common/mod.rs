//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use dvqr_core::bicop::PairCopula;

/// Binomial(n, p) probabilities on `0..=n`.
pub fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut c = 1.0;
    for k in 0..=n {
        if k > 0 {
            c *= (n - k + 1) as f64 / k as f64;
        }
        out.push(c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32));
    }
    out
}

/// Joint PMF of an all-discrete D-vine by direct enumeration.
///
/// Variable `i` takes values `0..pmfs[i].len()`; `pairs[t][i]` is the copula of
/// edge `(i, i + t + 1)` with the lower-index variable as first argument.
/// The joint of a path `i..=j` is built from the rectangle probability of
/// `C_ij` evaluated at conditional CDFs obtained by summing the sub-path joints.
pub struct DiscreteVineOracle {
    pmfs: Vec<Vec<f64>>,
    pairs: Vec<Vec<PairCopula>>,
    memo: HashMap<(usize, Vec<usize>), f64>,
}

impl DiscreteVineOracle {
    pub fn new(pmfs: Vec<Vec<f64>>, pairs: Vec<Vec<PairCopula>>) -> Self {
        assert_eq!(pairs.len(), pmfs.len() - 1);
        DiscreteVineOracle {
            pmfs,
            pairs,
            memo: HashMap::new(),
        }
    }

    fn margin_cdf(&self, v: usize, x: isize) -> f64 {
        if x < 0 {
            0.0
        } else {
            self.pmfs[v][..=(x as usize).min(self.pmfs[v].len() - 1)].iter().sum::<f64>().min(1.0)
        }
    }

    /// P(X_i = xs[0], ..., X_{i+len-1} = xs[len-1]).
    pub fn joint(&mut self, i: usize, xs: &[usize]) -> f64 {
        if xs.len() == 1 {
            return self.pmfs[i][xs[0]];
        }
        let key = (i, xs.to_vec());
        if let Some(&p) = self.memo.get(&key) {
            return p;
        }
        let len = xs.len();
        let j = i + len - 1;
        let c = self.pairs[len - 2][i];
        let p = if len == 2 {
            let a = |x: isize| self.margin_cdf(i, x);
            let b = |x: isize| self.margin_cdf(j, x);
            rectangle(&c, a(xs[0] as isize), a(xs[0] as isize - 1), b(xs[1] as isize), b(xs[1] as isize - 1))
        } else {
            let mid = &xs[1..len - 1];
            let pmid = self.joint(i + 1, mid);
            if pmid <= 0.0 {
                0.0
            } else {
                let mut cum_i = vec![0.0];
                for y in 0..self.pmfs[i].len() {
                    let mut row = vec![y];
                    row.extend_from_slice(mid);
                    let p = self.joint(i, &row);
                    cum_i.push(cum_i.last().unwrap() + p / pmid);
                }
                let mut cum_j = vec![0.0];
                for y in 0..self.pmfs[j].len() {
                    let mut row = mid.to_vec();
                    row.push(y);
                    let p = self.joint(i + 1, &row);
                    cum_j.push(cum_j.last().unwrap() + p / pmid);
                }
                let (xi, xj) = (xs[0], xs[len - 1]);
                pmid * rectangle(
                    &c,
                    cum_i[xi + 1].min(1.0),
                    cum_i[xi].min(1.0),
                    cum_j[xj + 1].min(1.0),
                    cum_j[xj].min(1.0),
                )
            }
        };
        self.memo.insert(key, p);
        p
    }

    /// P(X_0 <= y | X_1..X_k = x) over the support of X_0, as a cumulative vector.
    pub fn response_cdf(&mut self, x: &[usize]) -> Vec<f64> {
        let m = self.pmfs[0].len();
        let probs: Vec<f64> = (0..m)
            .map(|y| {
                let mut row = vec![y];
                row.extend_from_slice(x);
                self.joint(0, &row)
            })
            .collect();
        let total: f64 = probs.iter().sum();
        let mut acc = 0.0;
        probs
            .iter()
            .map(|p| {
                acc += p / total;
                acc
            })
            .collect()
    }
}

fn rectangle(c: &PairCopula, u: f64, um: f64, v: f64, vm: f64) -> f64 {
    c.cdf(u, v) - c.cdf(um, v) - c.cdf(u, vm) + c.cdf(um, vm)
}

/// Every index tuple of a product of supports of the given sizes.
pub fn grid(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &s in sizes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..s).map(move |k| {
                    let mut p = prefix.clone();
                    p.push(k);
                    p
                })
            })
            .collect();
    }
    out
}

/// Largest cond_cdf error and number of quantile mismatches of a model built
/// from `pmfs` and `pairs`, checked against [`DiscreteVineOracle`] at every
/// support point of every variable and alpha in {0.05, 0.10, ..., 0.95}.
pub fn oracle_discrepancy(pmfs: &[Vec<f64>], pairs: &[Vec<PairCopula>]) -> (f64, usize) {
    use dvqr_core::dvine::DVineRegModel;
    use dvqr_core::margins::{DiscreteMargin, MarginalModel, PseudoObs};

    let margin = |p: &Vec<f64>| {
        let support = (0..p.len()).map(|k| k as f64).collect();
        MarginalModel::Discrete(DiscreteMargin::from_pmf(support, p.clone()).unwrap())
    };
    let model = DVineRegModel::from_parametric_parts(
        margin(&pmfs[0]),
        pmfs[1..].iter().map(margin).collect(),
        pairs.to_vec(),
    )
    .unwrap();
    let response = match &model.fits()[0].response_margin {
        MarginalModel::Discrete(d) => d.clone(),
        _ => unreachable!(),
    };
    let alphas: Vec<f64> = (1..=19).map(|k| k as f64 * 0.05).collect();
    let mut oracle = DiscreteVineOracle::new(pmfs.to_vec(), pairs.to_vec());
    let sizes: Vec<usize> = pmfs[1..].iter().map(Vec::len).collect();
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    for x in grid(&sizes) {
        let truth = oracle.response_cdf(&x);
        let mut row = vec![f64::NAN];
        row.extend(x.iter().map(|&k| k as f64));
        for (k, t) in truth.iter().enumerate() {
            let (u, um) = response.cell(k);
            let got = model.cond_cdf(PseudoObs::discrete(u, um), &row).unwrap();
            worst = worst.max((got - t).abs());
        }
        let q = model.predict_quantiles(&alphas, &row).unwrap();
        for (a, got) in alphas.iter().zip(q) {
            let expected = truth.iter().position(|&c| c >= *a - 1e-12).unwrap_or(truth.len() - 1);
            if got != expected as f64 {
                mismatches += 1;
            }
        }
    }
    (worst, mismatches)
}
