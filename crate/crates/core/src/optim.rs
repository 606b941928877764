//! Scalar maximization and root bracketing.

/// Result of a bounded scalar maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Brent's parabolic/golden-section search for the maximum of `f` on `[lo, hi]`,
/// started at `init` (clamped into the interval). `tol` is an absolute
/// tolerance on the argument.
///
/// When `max_iter` is exhausted the best point seen so far is returned with
/// `converged == false`.
pub fn brent_max<F>(mut f: F, lo: f64, hi: f64, init: f64, tol: f64, max_iter: usize) -> Maximum
where
    F: FnMut(f64) -> f64,
{
    const CGOLD: f64 = 0.381_966_011_250_105;
    let mut g = |x: f64| {
        let v = -f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let span = b - a;
    let mut x = init.clamp(a + 1e-3 * span, b - 1e-3 * span);
    if !x.is_finite() {
        x = a + CGOLD * span;
    }
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    let eps = f64::EPSILON.sqrt();

    for iter in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return Maximum {
                x,
                value: -fx,
                iterations: iter,
                converged: true,
            };
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = g(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Maximum {
        x,
        value: -fx,
        iterations: max_iter,
        converged: false,
    }
}

/// Bisection for the smallest-residual root of a nondecreasing function
/// `f(x) - target` on `[lo, hi]`. Stops when the bracket is narrower than
/// `tol` or after `max_steps` halvings.
pub fn bisect_increasing<F>(f: F, target: f64, lo: f64, hi: f64, tol: f64, max_steps: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    for _ in 0..max_steps {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if f(mid) < target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < tol {
            break;
        }
    }
    0.5 * (a + b)
}
