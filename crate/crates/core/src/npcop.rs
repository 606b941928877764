//! Nonparametric pair copulas and continuous convolution of discrete columns.
//!
//! The kernel estimator works on the normal scale: both coordinates are mapped
//! by the standard normal quantile, a bivariate Gaussian kernel density is fitted
//! there, and the copula density carries the Jacobian `1/(phi(z1) phi(z2))`.

use rand::distr::{Distribution, OpenClosed01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bicop::{clamp_unit, Direction};
use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf, norm_quantile};

/// Half-width of the uniform jitter noise.
pub const JITTER_HALF_WIDTH: f64 = 0.5;
/// Minimum number of pairs for a kernel fit.
pub const MIN_KERNEL_PAIRS: usize = 30;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Seed and replicate count for jittering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub seed: u64,
    pub replicates: usize,
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec { seed: 1, replicates: 1 }
    }
}

impl JitterSpec {
    pub fn new(seed: u64, replicates: usize) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::InvalidSpec("jitter replicates must be positive".into()));
        }
        Ok(JitterSpec { seed, replicates })
    }

    /// Independent stream for one column within one replicate.
    pub fn rng(&self, replicate: usize, column: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((replicate as u64) << 32) | column as u64);
        rng
    }
}

/// Maps the distinct values of a discrete column to codes `0..K-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCoder {
    support: Vec<f64>,
}

impl RankCoder {
    pub fn fit(column: &[f64]) -> Result<Self> {
        if column.iter().any(|x| !x.is_finite()) {
            return Err(Error::Precondition("non-finite value in column".into()));
        }
        let mut support = column.to_vec();
        support.sort_by(f64::total_cmp);
        support.dedup();
        if support.is_empty() {
            return Err(Error::Precondition("empty column".into()));
        }
        Ok(RankCoder { support })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn levels(&self) -> usize {
        self.support.len()
    }

    /// Code of the support value nearest to `x`; ties go to the larger value.
    pub fn code(&self, x: f64) -> usize {
        let k = self.support.partition_point(|&s| s < x);
        if k == 0 {
            0
        } else if k == self.support.len() {
            k - 1
        } else if self.support[k] - x <= x - self.support[k - 1] {
            k
        } else {
            k - 1
        }
    }

    pub fn encode(&self, column: &[f64]) -> Vec<f64> {
        column.iter().map(|&x| self.code(x) as f64).collect()
    }

    pub fn decode(&self, code: usize) -> f64 {
        self.support[code.min(self.support.len() - 1)]
    }

    /// Maps a jittered-scale value back to the original support.
    pub fn dejitter(&self, z: f64) -> f64 {
        self.decode(dejitter_code(z, self.levels()))
    }
}

/// Inverse of jittering on codes `0..levels-1`: `ceil(z - 1/2)`, clamped.
pub fn dejitter_code(z: f64, levels: usize) -> usize {
    let k = (z - JITTER_HALF_WIDTH).ceil();
    if k <= 0.0 || k.is_nan() {
        0
    } else {
        (k as usize).min(levels.saturating_sub(1))
    }
}

/// Adds independent uniform noise on `(-1/2, 1/2]` to an integer-coded column.
pub fn jitter(column: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    column
        .iter()
        .map(|&x| {
            let e: f64 = OpenClosed01.sample(rng);
            x + e - JITTER_HALF_WIDTH
        })
        .collect()
}

/// Gaussian transformation kernel estimator of a pair copula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCopula {
    z1: Vec<f64>,
    z2: Vec<f64>,
    /// Bandwidth matrix entries `[h11, h12, h22]`.
    bandwidth: [f64; 3],
}

impl KernelCopula {
    pub fn len(&self) -> usize {
        self.z1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z1.is_empty()
    }

    pub fn bandwidth(&self) -> [f64; 3] {
        self.bandwidth
    }

    fn det(&self) -> f64 {
        let [a, b, c] = self.bandwidth;
        a * c - b * b
    }

    /// Log of the kernel density on the normal scale.
    fn ln_normal_density(&self, x1: f64, x2: f64) -> f64 {
        let [a, b, c] = self.bandwidth;
        let det = self.det();
        let (i11, i12, i22) = (c / det, -b / det, a / det);
        let q = |i: usize| {
            let d1 = x1 - self.z1[i];
            let d2 = x2 - self.z2[i];
            -0.5 * (i11 * d1 * d1 + 2.0 * i12 * d1 * d2 + i22 * d2 * d2)
        };
        let n = self.len();
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            m = m.max(q(i));
        }
        let s: f64 = (0..n).map(|i| (q(i) - m).exp()).sum();
        m + s.ln() - (n as f64).ln() - LN_2PI - 0.5 * det.ln()
    }

    pub fn ln_pdf(&self, u: f64, v: f64) -> f64 {
        let x1 = norm_quantile(clamp_unit(u));
        let x2 = norm_quantile(clamp_unit(v));
        self.ln_normal_density(x1, x2) + LN_2PI + 0.5 * (x1 * x1 + x2 * x2)
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        self.ln_pdf(u, v).exp()
    }

    /// Normal mixture describing the free coordinate given `given`.
    fn conditional(&self, given: f64, dir: Direction) -> Mixture {
        let zg = norm_quantile(clamp_unit(given));
        let [h11, h12, h22] = self.bandwidth;
        let (free, cond, hf, hc) = match dir {
            Direction::FirstGivenSecond => (&self.z1, &self.z2, h11, h22),
            Direction::SecondGivenFirst => (&self.z2, &self.z1, h22, h11),
        };
        let slope = h12 / hc;
        let lw: Vec<f64> = cond.iter().map(|c| -0.5 * (zg - c).powi(2) / hc).collect();
        let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut mix = Mixture {
            mu: Vec::new(),
            w: Vec::new(),
            sd: (hf - h12 * h12 / hc).sqrt(),
        };
        for (i, l) in lw.iter().enumerate() {
            // weights below e^-40 of the largest cannot move the result
            if l - m > -40.0 {
                mix.w.push((l - m).exp());
                mix.mu.push(free[i] + slope * (zg - cond[i]));
            }
        }
        let total: f64 = mix.w.iter().sum();
        mix.w.iter_mut().for_each(|w| *w /= total);
        mix
    }

    /// Conditional distribution of one argument given the other.
    ///
    /// The kernel integral along the free coordinate is exact: a mixture of
    /// normal CDFs weighted by the kernel in the conditioning coordinate.
    pub fn hfunc(&self, x: f64, given: f64, dir: Direction) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        self.conditional(given, dir).cdf(x)
    }

    /// Inverse of [`hfunc`](Self::hfunc) in its first argument, by bisection.
    pub fn hinv(&self, p: f64, given: f64, dir: Direction) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return 1.0;
        }
        self.conditional(given, dir).quantile(p)
    }

    /// [`hinv`](Self::hinv) applied in place to many levels sharing one conditioning value.
    pub fn hinv_all(&self, ps: &mut [f64], given: f64, dir: Direction) {
        let mix = self.conditional(given, dir);
        let mut prev: Option<f64> = None;
        for p in ps.iter_mut() {
            *p = if *p <= 0.0 {
                0.0
            } else if *p >= 1.0 {
                1.0
            } else {
                let (u, z) = mix.solve(*p, prev);
                prev = Some(z);
                u
            };
        }
    }
}

struct Mixture {
    mu: Vec<f64>,
    w: Vec<f64>,
    sd: f64,
}

impl Mixture {
    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        self.cdf_z(norm_quantile(clamp_unit(x))).0
    }

    /// Mixture CDF and density on the normal scale.
    fn cdf_z(&self, z: f64) -> (f64, f64) {
        let (mut c, mut d) = (0.0, 0.0);
        for (mu, w) in self.mu.iter().zip(&self.w) {
            let t = (z - mu) / self.sd;
            c += w * norm_cdf(t);
            d += w * norm_pdf(t);
        }
        (c.clamp(0.0, 1.0), d / self.sd)
    }

    /// Inverse CDF by Newton steps on the normal scale, kept inside a
    /// shrinking bracket and falling back to bisection when a step leaves it.
    fn quantile(&self, p: f64) -> f64 {
        self.solve(p, None).0
    }

    /// Returns the copula-scale quantile and its normal score; `start` is an
    /// optional initial normal score, e.g. the root for a nearby level.
    fn solve(&self, p: f64, start: Option<f64>) -> (f64, f64) {
        let lo_mu = self.mu.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_mu = self.mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (lo_mu - 40.0 * self.sd, hi_mu + 40.0 * self.sd);
        let mut z = start.unwrap_or_else(|| norm_quantile(p)).clamp(lo, hi);
        for _ in 0..200 {
            let (c, d) = self.cdf_z(z);
            let err = c - p;
            if err.abs() < 1e-14 {
                break;
            }
            if err < 0.0 {
                lo = z;
            } else {
                hi = z;
            }
            let newton = z - err / d;
            let next = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - z).abs() < 1e-13 * (1.0 + z.abs()) || hi - lo < 1e-13 {
                z = next;
                break;
            }
            z = next;
        }
        (clamp_unit(norm_cdf(z)), z)
    }
}

/// Fits the transformation kernel estimator with bandwidth `n^(-1/3)` times
/// the sample covariance of the normal scores.
pub fn fit_kernel_copula(pairs: &[(f64, f64)]) -> Result<KernelCopula> {
    let n = pairs.len();
    if n < MIN_KERNEL_PAIRS {
        return Err(Error::Precondition(format!(
            "at least {MIN_KERNEL_PAIRS} pairs required, got {n}"
        )));
    }
    if pairs
        .iter()
        .any(|&(u, v)| !(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0))
    {
        return Err(Error::Precondition("pairs must lie strictly inside (0,1)^2".into()));
    }
    let z1: Vec<f64> = pairs.iter().map(|p| norm_quantile(clamp_unit(p.0))).collect();
    let z2: Vec<f64> = pairs.iter().map(|p| norm_quantile(clamp_unit(p.1))).collect();
    let nf = n as f64;
    let m1 = z1.iter().sum::<f64>() / nf;
    let m2 = z2.iter().sum::<f64>() / nf;
    let (mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (d1, d2) = (z1[i] - m1, z2[i] - m2);
        s11 += d1 * d1;
        s12 += d1 * d2;
        s22 += d2 * d2;
    }
    let scale = nf.powf(-1.0 / 3.0) / (nf - 1.0);
    let bandwidth = [s11 * scale, s12 * scale, s22 * scale];
    let det = bandwidth[0] * bandwidth[2] - bandwidth[1] * bandwidth[1];
    if !(bandwidth[0] > 0.0 && bandwidth[2] > 0.0 && det > 1e-12 * bandwidth[0] * bandwidth[2]) {
        return Err(Error::Precondition("singular bandwidth matrix".into()));
    }
    Ok(KernelCopula { z1, z2, bandwidth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniforms(seed: u64, n: usize) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (rng.random(), rng.random())).collect()
    }

    fn clayton(seed: u64, theta: f64, n: usize) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random_range(1e-9..1.0);
                let w: f64 = rng.random_range(1e-9..1.0);
                let v = ((w.powf(-theta / (1.0 + theta)) - 1.0) * u.powf(-theta) + 1.0).powf(-1.0 / theta);
                (u, v)
            })
            .collect()
    }

    #[test]
    fn jitter_separates_and_rounds_back() {
        let col = [1.0, 1.0, 2.0];
        let spec = JitterSpec::new(9, 1).unwrap();
        let j = jitter(&col, &mut spec.rng(0, 0));
        assert!(j[0] != j[1]);
        for (x, z) in col.iter().zip(&j) {
            assert!(z > &(x - 0.5) && z <= &(x + 0.5));
            assert_eq!((z - 0.5).ceil(), *x);
        }
        assert_eq!(j, jitter(&col, &mut spec.rng(0, 0)));
        assert_ne!(j, jitter(&col, &mut spec.rng(1, 0)));
    }

    #[test]
    fn dejitter_boundary_convention() {
        assert_eq!(dejitter_code(0.5, 3), 0);
        assert_eq!(dejitter_code(0.5 + 1e-12, 3), 1);
        assert_eq!(dejitter_code(-3.0, 3), 0);
        assert_eq!(dejitter_code(9.0, 3), 2);
        let coder = RankCoder::fit(&[3.0, 7.0, 7.0, 10.0]).unwrap();
        assert_eq!(coder.encode(&[3.0, 7.0, 10.0]), vec![0.0, 1.0, 2.0]);
        assert_eq!(coder.dejitter(1.2), 7.0);
        assert_eq!(coder.code(5.0), 1);
    }

    #[test]
    fn jittered_binomial_cdf_at_half_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 100_000;
        let col: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.random_bool(0.5)) + u8::from(rng.random_bool(0.5))))
            .collect();
        let j = jitter(&col, &mut JitterSpec::default().rng(0, 0));
        let ecdf = j.iter().filter(|&&z| z <= 1.5).count() as f64 / n as f64;
        assert!((ecdf - 0.75).abs() < 0.01, "{ecdf}");
    }

    #[test]
    fn independent_uniforms_give_flat_density() {
        let kc = fit_kernel_copula(&uniforms(32, 2000)).unwrap();
        let c = kc.pdf(0.5, 0.5);
        assert!((0.85..=1.15).contains(&c), "{c}");
        assert!((kc.hfunc(0.4, 0.7, Direction::FirstGivenSecond) - 0.4).abs() <= 0.05);
        assert!(kc.pdf(1e-14, 1.0).is_finite());
    }

    #[test]
    fn density_integrates_to_one() {
        let kc = fit_kernel_copula(&clayton(33, 1.0, 500)).unwrap();
        let g = 100;
        let h = 1.0 / g as f64;
        let mut total = 0.0;
        for i in 0..g {
            for j in 0..g {
                total += kc.pdf((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() <= 0.02, "{total}");
    }

    #[test]
    fn dependent_sample_beats_independence_and_is_near_symmetric() {
        let data = clayton(34, 1.0, 2000);
        let kc = fit_kernel_copula(&data).unwrap();
        let cll: f64 = data.iter().map(|&(u, v)| kc.ln_pdf(u, v)).sum();
        assert!(cll > 0.0, "{cll}");
        // a single fit has about 8% pointwise noise, so average five independent fits
        let fits: Vec<KernelCopula> = (0..5)
            .map(|s| fit_kernel_copula(&clayton(100 + s, 1.0, 2000)).unwrap())
            .collect();
        let avg = |u: f64, v: f64| fits.iter().map(|k| k.pdf(u, v)).sum::<f64>() / 5.0;
        let (mut diff, mut mass) = (0.0, 0.0);
        for i in 1..20 {
            for j in 1..20 {
                let (u, v) = (i as f64 / 20.0, j as f64 / 20.0);
                let (a, b) = (avg(u, v), avg(v, u));
                diff += (a - b).abs();
                mass += a;
            }
        }
        assert!(diff / mass < 0.1, "relative asymmetry {}", diff / mass);
        assert!(kc.pdf(0.1, 0.1) > kc.pdf(0.05, 0.95));
    }

    #[test]
    fn hfunc_normalized_monotone_and_invertible() {
        let kc = fit_kernel_copula(&clayton(35, 2.0, 400)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for dir in [Direction::FirstGivenSecond, Direction::SecondGivenFirst] {
            for _ in 0..50 {
                let v: f64 = rng.random_range(0.001..0.999);
                assert_eq!(kc.hfunc(1.0, v, dir), 1.0);
                assert_eq!(kc.hfunc(0.0, v, dir), 0.0);
                let grid: Vec<f64> = (1..100).map(|i| kc.hfunc(i as f64 / 100.0, v, dir)).collect();
                assert!(grid.windows(2).all(|w| w[0] <= w[1]));
            }
            for _ in 0..100 {
                let u: f64 = rng.random_range(0.001..0.999);
                let v: f64 = rng.random_range(0.001..0.999);
                let back = kc.hinv(kc.hfunc(u, v, dir), v, dir);
                assert!((back - u).abs() <= 1e-6, "{u} -> {back}");
                let p: f64 = rng.random_range(1e-6..1.0 - 1e-6);
                let resid = kc.hfunc(kc.hinv(p, v, dir), v, dir) - p;
                assert!(resid.abs() <= 1e-10, "p={p}: residual {resid:e}");
            }
        }
    }

    #[test]
    fn hfunc_matches_numerical_integral_of_density() {
        let kc = fit_kernel_copula(&clayton(37, 1.5, 200)).unwrap();
        // independent oracle: trapezoid rule on the normal scale
        let (u, v) = (0.35, 0.6);
        let zu = norm_quantile(u);
        let dens = |z: f64| kc.pdf(norm_cdf(z), v) * crate::special::norm_pdf(z);
        let integ = |a: f64, b: f64| {
            let m = 20_000;
            let h = (b - a) / m as f64;
            (0..=m)
                .map(|i| {
                    let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                    w * dens(a + i as f64 * h)
                })
                .sum::<f64>()
                * h
        };
        let oracle = integ(-9.0, zu) / integ(-9.0, 9.0);
        assert!((kc.hfunc(u, v, Direction::FirstGivenSecond) - oracle).abs() < 1e-6);
    }

    #[test]
    fn too_few_pairs_rejected() {
        assert!(fit_kernel_copula(&uniforms(38, 29)).is_err());
        assert!(JitterSpec::new(1, 0).is_err());
    }
}
