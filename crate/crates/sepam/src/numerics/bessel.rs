//! Exponentially scaled modified Bessel functions q_m(x) = e^{-x} I_m(x).
//!
//! q_m(x) is the probability that a rate-1 continuous-time simple random walk
//! on ℤ sits at m at time x.

use std::f64::consts::PI;

/// Chernoff bound on q_n(x) for n ≥ 0.
pub fn chernoff_bound(n: f64, x: f64) -> f64 {
    if n <= 0.0 {
        return 1.0;
    }
    if x <= 0.0 {
        return 0.0;
    }
    let r = n / x;
    (-n * r.asinh() + (x * x + n * n).sqrt() - x).exp()
}

/// Smallest n with chernoff_bound(n, x) < eps.
pub fn tail_index(x: f64, eps: f64) -> usize {
    let mut n = 1usize;
    while chernoff_bound(n as f64, x) >= eps {
        n *= 2;
    }
    let (mut lo, mut hi) = (n / 2, n);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if chernoff_bound(mid as f64, x) >= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Trapezoid-rule evaluation of q_m(x) = (1/2π)∫ e^{-x(1-cos k)} cos(mk) dk.
///
/// The rule with N nodes returns Σ_l q_{m+lN}(x) exactly, so N is chosen so the
/// aliased terms are below 1e-18. Values below 1e-13 are taken from `q_seq`.
pub fn q_fourier(m: i64, x: f64) -> f64 {
    let m = m.unsigned_abs() as usize;
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    let n_nodes = ((m + tail_index(x, 1e-18)).max(16)).next_multiple_of(4);
    let mut s = 0.0;
    for j in 0..n_nodes {
        let th = 2.0 * PI * j as f64 / n_nodes as f64;
        let idx = (m * j) % n_nodes;
        let c = (2.0 * PI * idx as f64 / n_nodes as f64).cos();
        s += (-x * (1.0 - th.cos())).exp() * c;
    }
    let v = s / n_nodes as f64;
    // the sum carries ~1e-17 absolute error; small values come from the recurrence
    if v < 1e-13 {
        q_seq(m, x)[m]
    } else {
        v
    }
}

/// q_0(x), ..., q_mmax(x) by normalized backward recurrence (power series for x < 1).
pub fn q_seq(mmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; mmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if x < 1.0 {
        let h = 0.5 * x;
        let ex = (-x).exp();
        let mut lead = 1.0; // (x/2)^m / m!
        for (m, o) in out.iter_mut().enumerate() {
            if m > 0 {
                lead *= h / m as f64;
            }
            if lead == 0.0 {
                break;
            }
            let mut term = lead;
            let mut s = 0.0;
            let mut k = 0usize;
            while term > 1e-18 * s || k == 0 {
                s += term;
                k += 1;
                term *= h * h / (k as f64 * (m + k) as f64);
            }
            *o = ex * s;
        }
        return out;
    }
    let start = tail_index(x, 1e-30).max(mmax + 30 + (2.0 * x.sqrt()) as usize);
    let mut b_next = 0.0f64;
    let mut b = 1e-200f64;
    let mut sum = 0.0f64;
    for k in (1..=start).rev() {
        if k <= mmax {
            out[k] = b;
        }
        sum += 2.0 * b;
        let b_prev = (2.0 * k as f64 / x) * b + b_next;
        b_next = b;
        b = b_prev;
        if b > 1e200 {
            let s = 1e-200;
            b *= s;
            b_next *= s;
            sum *= s;
            for o in out.iter_mut() {
                *o *= s;
            }
        }
    }
    out[0] = b;
    sum += b;
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

/// Single value q_m(x) through the recurrence.
pub fn q(m: i64, x: f64) -> f64 {
    let m = m.unsigned_abs() as usize;
    q_seq(m, x)[m]
}

/// Coefficients a_k(m) of the large-x expansion
/// q_m(x) ~ (2πx)^{-1/2} Σ_k (-1)^k a_k(m) x^{-k}.
pub fn asymptotic_coeffs(m: i64, terms: usize) -> Vec<f64> {
    let mu = 4.0 * (m as f64) * (m as f64);
    let mut a = vec![1.0; terms];
    for k in 1..terms {
        let j = (2 * k - 1) as f64;
        a[k] = a[k - 1] * (mu - j * j) / (k as f64 * 8.0);
    }
    a.iter()
        .enumerate()
        .map(|(k, v)| if k % 2 == 1 { -v } else { *v })
        .collect()
}
