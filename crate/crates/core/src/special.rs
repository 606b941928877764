//! Normal distribution helpers, the bivariate normal CDF, Gauss-Legendre
//! rules and the Debye function used by the Frank family.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn ln_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

fn horner(x: f64, coeffs: &[f64]) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// Standard normal quantile (Wichura's AS 241, about 1e-16 relative accuracy).
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = horner(
            r,
            &[
                2509.080_928_730_122_7,
                33430.575_583_588_128,
                67265.770_927_008_7,
                45921.953_931_549_87,
                13731.693_765_509_461,
                1971.590_950_306_551_4,
                133.141_667_891_784_38,
                3.387_132_872_796_366_6,
            ],
        );
        let den = horner(
            r,
            &[
                5226.495_278_852_546,
                28729.085_735_721_943,
                39307.895_800_092_71,
                21213.794_301_586_597,
                5394.196_021_424_751,
                687.187_007_492_057_9,
                42.313_330_701_600_91,
                1.0,
            ],
        );
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = horner(
            r,
            &[
                7.745_450_142_783_414e-4,
                0.022_723_844_989_269_184,
                0.241_780_725_177_450_6,
                1.270_458_252_452_368_4,
                3.647_848_324_763_204_5,
                5.769_497_221_460_691,
                4.630_337_846_156_546,
                1.423_437_110_749_683_5,
            ],
        );
        let den = horner(
            r,
            &[
                1.050_750_071_644_416_8e-9,
                5.475_938_084_995_345e-4,
                0.015_198_666_563_616_457,
                0.148_103_976_427_480_08,
                0.689_767_334_985_1,
                1.676_384_830_183_803_8,
                2.053_191_626_637_759,
                1.0,
            ],
        );
        num / den
    } else {
        r -= 5.0;
        let num = horner(
            r,
            &[
                2.010_334_399_292_288_1e-7,
                2.711_555_568_743_487_6e-5,
                0.001_242_660_947_388_078_4,
                0.026_532_189_526_576_124,
                0.296_560_571_828_504_9,
                1.784_826_539_917_291_3,
                5.463_784_911_164_114,
                6.657_904_643_501_103,
            ],
        );
        let den = horner(
            r,
            &[
                2.044_263_103_389_939_7e-15,
                1.421_511_758_316_446e-7,
                1.846_318_317_510_054_8e-5,
                7.868_691_311_456_133e-4,
                0.014_875_361_290_850_615,
                0.136_929_880_922_735_8,
                0.599_832_206_555_887_9,
                1.0,
            ],
        );
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

const GL_W: [[f64; 10]; 3] = [
    [
        0.171_324_492_379_170_5,
        0.360_761_573_048_138_4,
        0.467_913_934_572_690_4,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        0.047_175_336_386_511_77,
        0.106_939_325_995_318_3,
        0.160_078_328_543_346_4,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_7,
        0.249_147_045_813_402_9,
        0.0, 0.0, 0.0, 0.0,
    ],
    [
        0.017_614_007_139_152_12,
        0.040_601_429_800_386_94,
        0.062_672_048_334_109_06,
        0.083_276_741_576_704_75,
        0.101_930_119_817_240_4,
        0.118_194_531_961_518_4,
        0.131_688_638_449_176_6,
        0.142_096_109_318_382_1,
        0.149_172_986_472_603_7,
        0.152_753_387_130_725_9,
    ],
];

const GL_X: [[f64; 10]; 3] = [
    [
        -0.932_469_514_203_152_2,
        -0.661_209_386_466_264_7,
        -0.238_619_186_083_197,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        -0.981_560_634_246_719_1,
        -0.904_117_256_370_475,
        -0.769_902_674_194_305,
        -0.587_317_954_286_617_1,
        -0.367_831_498_998_180_2,
        -0.125_233_408_511_469_2,
        0.0, 0.0, 0.0, 0.0,
    ],
    [
        -0.993_128_599_185_094_9,
        -0.963_971_927_277_913_8,
        -0.912_234_428_251_325_9,
        -0.839_116_971_822_218_8,
        -0.746_331_906_460_150_8,
        -0.636_053_680_726_515,
        -0.510_867_001_950_827_1,
        -0.373_706_088_715_419_6,
        -0.227_785_851_141_645_1,
        -0.076_526_521_133_497_33,
    ],
];

/// Upper bivariate normal probability `P(X > h, Y > k)` with correlation `r`
/// (Genz's BVND algorithm, absolute accuracy near 1e-15).
fn bvnd(h: f64, k: f64, r: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let (ng, lg) = if r.abs() < 0.3 {
        (0, 3)
    } else if r.abs() < 0.75 {
        (1, 6)
    } else {
        (2, 10)
    };
    let w = &GL_W[ng];
    let x = &GL_X[ng];
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for i in 0..lg {
            let sn = (asr * (x[i] + 1.0) / 2.0).sin();
            bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            let sn = (asr * (-x[i] + 1.0) / 2.0).sin();
            bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        return bvn * asr / (2.0 * two_pi) + norm_cdf(-h) * norm_cdf(-k);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / a_s + hk) / 2.0).exp()
            * (1.0 - c * (bs - a_s) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * two_pi.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for i in 0..lg {
            let xs = (a * (x[i] + 1.0)).powi(2);
            let rs = (1.0 - xs).sqrt();
            bvn += a
                * w[i]
                * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                    - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
            let xs = a_s * (-x[i] + 1.0).powi(2) / 4.0;
            let rs = (1.0 - xs).sqrt();
            bvn += a
                * w[i]
                * (-(bs / xs + hk) / 2.0).exp()
                * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                    - (1.0 + c * xs * (1.0 + d * xs)));
        }
        bvn = -bvn / two_pi;
    }
    if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else {
        bvn = -bvn;
        if k > h {
            if h < 0.0 {
                bvn += norm_cdf(k) - norm_cdf(h);
            } else {
                bvn += norm_cdf(-h) - norm_cdf(-k);
            }
        }
        bvn
    }
}

/// Bivariate standard normal CDF `P(X <= x, Y <= y)` with correlation `rho`.
pub fn bvn_cdf(x: f64, y: f64, rho: f64) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return norm_cdf(y);
    }
    if y == f64::INFINITY {
        return norm_cdf(x);
    }
    bvnd(-x, -y, rho).clamp(0.0, 1.0)
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Debye function of order one, `D1(x) = (1/x) * int_0^x t / (e^t - 1) dt`.
pub fn debye1(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x < 0.0 {
        return debye1(-x) - x / 2.0;
    }
    if x < 1e-2 {
        let x2 = x * x;
        return 1.0 - x / 4.0 + x2 / 36.0 - x2 * x2 / 3600.0;
    }
    thread_local! {
        static RULE: (Vec<f64>, Vec<f64>) = gauss_legendre(20);
    }
    let panels = 8;
    let width = x / panels as f64;
    let integral = RULE.with(|(nodes, weights)| {
        let mut acc = 0.0;
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * width;
            for (z, w) in nodes.iter().zip(weights) {
                let t = mid + 0.5 * width * z;
                acc += w * t / t.exp_m1();
            }
        }
        acc * 0.5 * width
    });
    integral / x
}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent route: integrate phi(t) * Phi((y - rho t)/sqrt(1-rho^2)) over t <= x
    // with composite Simpson on a fine grid.
    fn bvn_by_quadrature(x: f64, y: f64, rho: f64) -> f64 {
        let lo = -12.0_f64;
        let hi = x.min(12.0);
        if hi <= lo {
            return 0.0;
        }
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let s = (1.0 - rho * rho).sqrt();
        let f = |t: f64| norm_pdf(t) * norm_cdf((y - rho * t) / s);
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let t = lo + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        acc * h / 3.0
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.2, 0.5, 0.77, 0.975, 1.0 - 1e-9] {
            let x = norm_quantile(p);
            let tail = p.min(1.0 - p);
            assert!((norm_cdf(x) - p).abs() <= 1e-13 * tail, "p={p}");
        }
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        assert!((norm_quantile(1e-12) + 7.034_483_825_301_131).abs() < 1e-13);
        assert_eq!(norm_quantile(0.5), 0.0);
    }

    #[test]
    fn bivariate_normal_matches_quadrature() {
        for &rho in &[-0.999, -0.95, -0.6, -0.1, 0.0, 0.2, 0.5, 0.8, 0.93, 0.999] {
            for &(x, y) in &[(-1.3, 0.4), (0.0, 0.0), (2.1, 1.7), (-3.0, -2.5), (0.7, -0.9)] {
                let a = bvn_cdf(x, y, rho);
                let b = bvn_by_quadrature(x, y, rho);
                assert!((a - b).abs() < 1e-10, "rho={rho} x={x} y={y}: {a} vs {b}");
            }
        }
        // zero correlation factorizes
        assert!((bvn_cdf(0.3, -0.2, 0.0) - norm_cdf(0.3) * norm_cdf(-0.2)).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(25);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 0.4).abs() < 1e-14);
    }

    #[test]
    fn debye_known_values() {
        // D1(1) = 0.777504634112248...
        assert!((debye1(1.0) - 0.777_504_634_112_248_3).abs() < 1e-13);
        assert!((debye1(0.009) - debye1(0.011)).abs() < 1e-3);
        assert!((debye1(-2.0) - (debye1(2.0) + 1.0)).abs() < 1e-14);
    }
}
