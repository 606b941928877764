//! Rank statistics.

use std::cmp::Ordering;

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

fn tied_pairs(sorted: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut run = 1usize;
    for i in 1..=sorted.len() {
        if i < sorted.len() && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += (run * (run - 1) / 2) as f64;
            run = 1;
        }
    }
    total
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]);
    swaps += merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's tau-b in O(n log n) (Knight's merge-sort algorithm).
/// Returns 0 when either variable is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| cmp_f64(x[a], x[b]).then(cmp_f64(y[a], y[b])));

    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let n1 = tied_pairs(&xs);
    let mut n3 = 0.0;
    let mut run = 1usize;
    for k in 1..=n {
        if k < n && x[idx[k]] == x[idx[k - 1]] && y[idx[k]] == y[idx[k - 1]] {
            run += 1;
        } else {
            n3 += (run * (run - 1) / 2) as f64;
            run = 1;
        }
    }

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf) as f64;
    let n2 = tied_pairs(&ys);

    let n0 = (n * (n - 1) / 2) as f64;
    let denom = ((n0 - n1) * (n0 - n2)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (n0 - n1 - n2 + n3 - 2.0 * swaps) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut s, mut tx, mut ty, mut n0) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let a = (x[i] - x[j]).signum() * if x[i] == x[j] { 0.0 } else { 1.0 };
                let b = (y[i] - y[j]).signum() * if y[i] == y[j] { 0.0 } else { 1.0 };
                s += a * b;
                n0 += 1.0;
                if a == 0.0 {
                    tx += 1.0;
                }
                if b == 0.0 {
                    ty += 1.0;
                }
            }
        }
        let d = ((n0 - tx) * (n0 - ty)).sqrt();
        if d == 0.0 {
            0.0
        } else {
            s / d
        }
    }

    #[test]
    fn perfect_orderings() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x), 1.0);
        let y = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(&x, &y), -1.0);
    }

    proptest! {
        #[test]
        fn matches_pairwise_count(pairs in prop::collection::vec((0u8..6, 0u8..6), 2..60)) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let fast = kendall_tau(&x, &y);
            let slow = brute_tau_b(&x, &y);
            prop_assert!((fast - slow).abs() < 1e-12, "{} vs {}", fast, slow);
        }
    }
}
