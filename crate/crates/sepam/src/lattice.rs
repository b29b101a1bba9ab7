//! Geometry, symmetric kernels, continuous-time transition probabilities,
//! Green functions and half-space (reflected) kernels.

use crate::error::{invalid, Error, Result};
use crate::numerics::bessel::{self, asymptotic_coeffs, q_fourier, q_seq};
use crate::numerics::gauss::CompositeRule;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Environment variable naming the heat-kernel cache directory.
pub const CACHE_ENV: &str = "SEPAM_CACHE_DIR";

/// Discrete torus {0..L-1}^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Torus {
    pub d: usize,
    pub l: usize,
}

impl Torus {
    pub fn new(d: usize, l: usize) -> Result<Self> {
        if d == 0 {
            return invalid("torus dimension must be ≥ 1");
        }
        if l < 2 || !l.is_multiple_of(2) {
            return invalid(format!("torus side must be even and ≥ 2, got {l}"));
        }
        Ok(Self { d, l })
    }

    pub fn sites(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    /// Coordinates of site `i` (first coordinate varies fastest).
    pub fn coords(&self, mut i: usize) -> Vec<i64> {
        let mut c = vec![0; self.d];
        for x in c.iter_mut() {
            *x = (i % self.l) as i64;
            i /= self.l;
        }
        c
    }

    /// Index of the site with (possibly unwrapped) coordinates `c`.
    pub fn index(&self, c: &[i64]) -> usize {
        let l = self.l as i64;
        let mut i = 0usize;
        for x in c.iter().rev() {
            i = i * self.l + x.rem_euclid(l) as usize;
        }
        i
    }

    pub fn shift(&self, i: usize, z: &[i64]) -> usize {
        let c: Vec<i64> = self.coords(i).iter().zip(z).map(|(a, b)| a + b).collect();
        self.index(&c)
    }

    /// Representative of a displacement with coordinates in (-L/2, L/2].
    pub fn wrap_displacement(&self, z: &[i64]) -> Vec<i64> {
        let l = self.l as i64;
        z.iter()
            .map(|x| {
                let r = x.rem_euclid(l);
                if r > l / 2 {
                    r - l
                } else {
                    r
                }
            })
            .collect()
    }

    /// Torus ℓ¹ distance.
    pub fn distance(&self, a: usize, b: usize) -> i64 {
        let z: Vec<i64> = self
            .coords(b)
            .iter()
            .zip(self.coords(a))
            .map(|(x, y)| x - y)
            .collect();
        self.wrap_displacement(&z).iter().map(|x| x.abs()).sum()
    }
}

/// Symmetric random-walk kernel with an explicit jump rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub d: usize,
    pub offsets: Vec<(Vec<i64>, f64)>,
    pub rate: f64,
}

impl Kernel {
    pub fn new(d: usize, offsets: Vec<(Vec<i64>, f64)>, rate: f64) -> Result<Self> {
        if d == 0 {
            return invalid("kernel dimension must be ≥ 1");
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return invalid("kernel rate must be positive");
        }
        let total: f64 = offsets.iter().map(|o| o.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("kernel weights sum to {total}, not 1"));
        }
        for (z, w) in &offsets {
            if z.len() != d {
                return invalid("offset dimension mismatch");
            }
            if *w < 0.0 {
                return invalid("negative kernel weight");
            }
            if z.iter().all(|x| *x == 0) && *w != 0.0 {
                return invalid("kernel must vanish at zero displacement");
            }
            let neg: Vec<i64> = z.iter().map(|x| -x).collect();
            let wn: f64 = offsets.iter().filter(|o| o.0 == neg).map(|o| o.1).sum();
            let wz: f64 = offsets.iter().filter(|o| &o.0 == z).map(|o| o.1).sum();
            if (wn - wz).abs() > 1e-12 {
                return invalid("kernel is not symmetric");
            }
        }
        Ok(Self { d, offsets, rate })
    }

    pub fn with_rate(&self, rate: f64) -> Result<Self> {
        Self::new(self.d, self.offsets.clone(), rate)
    }

    /// True for nearest-neighbour simple random walk.
    pub fn is_srw(&self) -> bool {
        let w = 1.0 / (2 * self.d) as f64;
        self.offsets.len() == 2 * self.d
            && self
                .offsets
                .iter()
                .all(|(z, p)| (p - w).abs() < 1e-14 && z.iter().map(|x| x.abs()).sum::<i64>() == 1)
    }

    /// ϕ̂(k) = Σ_e p(e)(1 − cos k·e).
    pub fn symbol(&self, k: &[f64]) -> f64 {
        self.offsets
            .iter()
            .map(|(z, w)| {
                let kz: f64 = z.iter().zip(k).map(|(a, b)| *a as f64 * b).sum();
                w * (1.0 - kz.cos())
            })
            .sum()
    }

    pub fn max_step(&self) -> i64 {
        self.offsets
            .iter()
            .flat_map(|(z, _)| z.iter().map(|x| x.abs()))
            .max()
            .unwrap_or(0)
    }
}

/// Nearest-neighbour simple random walk kernel.
pub fn srw_kernel(d: usize, rate: f64) -> Result<Kernel> {
    if d == 0 {
        return invalid("d = 0");
    }
    let w = 1.0 / (2 * d) as f64;
    let mut offsets = Vec::with_capacity(2 * d);
    for i in 0..d {
        for s in [1i64, -1] {
            let mut z = vec![0; d];
            z[i] = s;
            offsets.push((z, w));
        }
    }
    Kernel::new(d, offsets, rate)
}

/// p_t(0, z) on ℤ^d for the kernel's continuous-time walk, by trapezoid
/// quadrature of the Fourier integral (exponentially convergent for periodic
/// analytic integrands).
pub fn transition_prob(kernel: &Kernel, t: f64, z: &[i64]) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return invalid("negative time");
    }
    if z.len() != kernel.d {
        return invalid("displacement dimension mismatch");
    }
    let s = kernel.rate * t;
    if kernel.is_srw() {
        let x = s / kernel.d as f64;
        return Ok(z.iter().map(|m| q_fourier(*m, x)).product());
    }
    if kernel.d > 3 {
        return Err(Error::Unsupported(
            "general kernels supported for d ≤ 3".into(),
        ));
    }
    let zmax = z
        .iter()
        .map(|x| x.unsigned_abs() as usize)
        .max()
        .unwrap_or(0);
    let jumps = poisson_tail_index(s, 1e-18);
    let n = (zmax + kernel.max_step() as usize * jumps + 8).next_multiple_of(4);
    let total = n.pow(kernel.d as u32);
    let mut acc = 0.0;
    let mut k = vec![0.0; kernel.d];
    for idx in 0..total {
        let mut r = idx;
        for kk in k.iter_mut() {
            *kk = 2.0 * PI * (r % n) as f64 / n as f64;
            r /= n;
        }
        let kz: f64 = z.iter().zip(&k).map(|(a, b)| *a as f64 * b).sum();
        acc += (-s * kernel.symbol(&k)).exp() * kz.cos();
    }
    Ok(acc / total as f64)
}

/// Smallest k with P(Poisson(λ) ≥ k) < eps (Chernoff).
fn poisson_tail_index(lambda: f64, eps: f64) -> usize {
    let mut k = lambda.ceil() as usize + 1;
    loop {
        let kf = k as f64;
        let b = if lambda == 0.0 {
            0.0
        } else {
            (-lambda + kf * (1.0 + (lambda / kf).ln())).exp()
        };
        if b < eps {
            return k;
        }
        k += 1 + k / 8;
    }
}

/// Transition probability of the kernel's walk on the torus, by the finite
/// Fourier sum over the dual torus.
pub fn torus_transition(kernel: &Kernel, torus: &Torus, t: f64, z: &[i64]) -> f64 {
    let l = torus.l;
    let s = kernel.rate * t;
    if kernel.is_srw() {
        let x = s / kernel.d as f64;
        return z
            .iter()
            .map(|m| {
                (0..l)
                    .map(|j| {
                        let k = 2.0 * PI * j as f64 / l as f64;
                        (-x * (1.0 - k.cos())).exp() * (k * *m as f64).cos()
                    })
                    .sum::<f64>()
                    / l as f64
            })
            .product();
    }
    let n = torus.sites();
    let mut acc = 0.0;
    for j in 0..n {
        let k: Vec<f64> = torus
            .coords(j)
            .iter()
            .map(|c| 2.0 * PI * *c as f64 / l as f64)
            .collect();
        let kz: f64 = z.iter().zip(&k).map(|(a, b)| *a as f64 * b).sum();
        acc += (-s * kernel.symbol(&k)).exp() * kz.cos();
    }
    acc / n as f64
}

/// Discrete-time n-step probability P(S_n = z) for simple random walk, by
/// dynamic programming over a window of radius n.
pub fn srw_n_step(d: usize, n: usize, z: &[i64]) -> f64 {
    if z.iter().map(|x| x.unsigned_abs() as usize).sum::<usize>() > n {
        return 0.0;
    }
    let w = 2 * n + 1;
    let size = w.pow(d as u32);
    let idx = |c: &[i64]| -> usize {
        c.iter()
            .rev()
            .fold(0usize, |acc, x| acc * w + (x + n as i64) as usize)
    };
    let mut cur = vec![0.0; size];
    cur[idx(&vec![0; d])] = 1.0;
    let p = 1.0 / (2 * d) as f64;
    for _ in 0..n {
        let mut next = vec![0.0; size];
        for (i, v) in cur.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let mut stride = 1;
            for _ in 0..d {
                let coord = (i / stride) % w;
                if coord + 1 < w {
                    next[i + stride] += p * v;
                }
                if coord > 0 {
                    next[i - stride] += p * v;
                }
                stride *= w;
            }
        }
        cur = next;
    }
    cur[idx(z)]
}

fn srw_only(kernel: &Kernel) -> Result<()> {
    if kernel.is_srw() {
        Ok(())
    } else {
        Err(Error::Unsupported(
            "Green functions are implemented for simple random walk".into(),
        ))
    }
}

/// ∫_{t_min}^∞ p_s(0, z) ds for the kernel's walk (simple random walk only).
///
/// The rate-1 integrand is ∏_i q_{z_i}(s/d); it is integrated by composite
/// Gauss–Legendre up to a cutoff X, and the tail [X, ∞) term by term from the
/// large-argument expansion of q_m. Each q_m(s/d) is itself the Fourier integral
/// (1/2π)∫ e^{-(s/d)(1-cos k)} cos(mk) dk, so this is the Fourier representation
/// with the time integral done on the outside.
pub fn green_at(kernel: &Kernel, z: &[i64], t_min: f64) -> Result<f64> {
    srw_only(kernel)?;
    let d = kernel.d;
    if d <= 2 {
        return Err(Error::Divergent(format!(
            "Green function of simple random walk diverges in d = {d}"
        )));
    }
    if t_min < 0.0 {
        return invalid("t_min must be ≥ 0");
    }
    let x0 = kernel.rate * t_min / d as f64;
    let zabs: Vec<usize> = z.iter().map(|x| x.unsigned_abs() as usize).collect();
    let mmax = zabs.iter().copied().max().unwrap_or(0);
    let cut = x0.max(80.0 + 4.0 * (mmax * mmax) as f64);
    let rule = CompositeRule::graded(x0, cut, 0.5, 1.4, 24);
    let body = rule.integrate(|x| {
        let q = q_seq(mmax, x);
        zabs.iter().map(|m| q[*m]).product()
    });
    let tail = asymptotic_tail(&zabs, d, cut);
    // rate-r walk: ∫ p^{(r)}_s ds = (1/r)∫ p^{(1)}_u du, and du = d·dx
    Ok(d as f64 * (body + tail) / kernel.rate)
}

/// ∫_X^∞ ∏_i q_{m_i}(x) dx from the asymptotic expansion.
fn asymptotic_tail(ms: &[usize], d: usize, x: f64) -> f64 {
    const TERMS: usize = 24;
    let mut poly = vec![0.0; TERMS];
    poly[0] = 1.0;
    for m in ms {
        let a = asymptotic_coeffs(*m as i64, TERMS);
        let mut next = vec![0.0; TERMS];
        for i in 0..TERMS {
            for j in 0..TERMS - i {
                next[i + j] += poly[i] * a[j];
            }
        }
        poly = next;
    }
    let half = d as f64 / 2.0;
    let pref = (2.0 * PI).powf(-half);
    let mut s = 0.0;
    for (k, c) in poly.iter().enumerate() {
        let e = half + k as f64 - 1.0;
        let term = c * x.powf(-e) / e;
        s += term;
        if term.abs() < 1e-20 * s.abs() {
            break;
        }
    }
    pref * s
}

/// Truncated Green function at the origin, ∫_{t_min}^∞ p_s(0,0) ds.
pub fn green(kernel: &Kernel, t_min: f64) -> Result<f64> {
    green_at(kernel, &vec![0; kernel.d], t_min)
}

/// G_d = ∫₀^∞ p_s(0,0) ds for the rate-1 simple random walk.
pub fn green_srw(d: usize) -> Result<f64> {
    green(&srw_kernel(d, 1.0)?, 0.0)
}

/// Second method for G_d: Σ_n P(S_n = 0) for discrete-time simple random walk
/// (equal to the continuous-time integral since holding times have mean 1).
///
/// Return probabilities are built by allocating steps to coordinates:
/// P_d(n) = Σ_m Bin(n, 1/d)(m) P_1(m) P_{d−1}(n−m). Terms beyond `n_max` are
/// summed from the local limit 2(d/2πn)^{d/2}(1 + c/n) with c fitted at the
/// cutoff. Returns (value, tail contribution).
pub fn green_return_sum(d: usize, n_max: usize) -> Result<(f64, f64)> {
    if d <= 2 {
        return Err(Error::Divergent(format!("d = {d} is recurrent")));
    }
    let n_max = n_max - n_max % 2;
    let lnf = |n: usize| ln_factorial(n);
    // P_1(m) for even m
    let mut p1 = vec![0.0; n_max + 1];
    p1[0] = 1.0;
    for m in (2..=n_max).step_by(2) {
        p1[m] = p1[m - 2] * (m - 1) as f64 / m as f64;
    }
    // P_2(2k) = P_1(2k)^2
    let mut prev: Vec<f64> = p1.iter().map(|x| x * x).collect();
    for dim in 3..=d {
        let pr = 1.0 / dim as f64;
        let mut cur = vec![0.0; n_max + 1];
        for n in (0..=n_max).step_by(2) {
            let nf = n as f64;
            let sd = (nf * pr * (1.0 - pr)).sqrt();
            let mode = ((nf + 1.0) * pr).floor() as usize;
            let w = (14.0 * sd) as usize + 6;
            let lo = mode.saturating_sub(w);
            let hi = (mode + w).min(n);
            let ln_mode = lnf(n) - lnf(mode) - lnf(n - mode)
                + mode as f64 * pr.ln()
                + (n - mode) as f64 * (1.0 - pr).ln();
            let pm = ln_mode.exp();
            let ratio = pr / (1.0 - pr);
            let mut s = 0.0;
            let mut b = pm;
            for m in mode..=hi {
                if m > mode {
                    b *= (n - m + 1) as f64 / m as f64 * ratio;
                }
                if m % 2 == 0 {
                    s += b * p1[m] * prev[n - m];
                }
            }
            b = pm;
            for m in (lo..mode).rev() {
                b *= (m + 1) as f64 / (n - m) as f64 / ratio;
                if m % 2 == 0 {
                    s += b * p1[m] * prev[n - m];
                }
            }
            cur[n] = s;
        }
        prev = cur;
    }
    let body: f64 = prev.iter().sum();
    let half = d as f64 / 2.0;
    let lead = |n: f64| 2.0 * (d as f64 / (2.0 * PI * n)).powf(half);
    let nf = n_max as f64;
    let c = nf * (prev[n_max] / lead(nf) - 1.0);
    // Σ_{k > K} of lead(2k)(1 + c/(2k)) by Euler–Maclaurin, K = n_max/2
    let kk = (n_max / 2 + 1) as f64;
    let zeta_tail =
        |s: f64| kk.powf(1.0 - s) / (s - 1.0) + 0.5 * kk.powf(-s) + s / 12.0 * kk.powf(-s - 1.0);
    let a = 2.0 * (d as f64 / (4.0 * PI)).powf(half);
    let tail = a * (zeta_tail(half) + c / 2.0 * zeta_tail(half + 1.0));
    Ok((body + tail, tail))
}

/// ln n! (exact sum below 20, Stirling series above).
pub fn ln_factorial(n: usize) -> f64 {
    if n < 20 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    let x = n as f64;
    x * x.ln() - x + 0.5 * (2.0 * PI * x).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
        + 1.0 / (1260.0 * x.powi(5))
        - 1.0 / (1680.0 * x.powi(7))
}

/// Reflection of a site across the plane between H⁺ = {z¹ > 0} and its complement.
pub fn reflect(y: &[i64]) -> Vec<i64> {
    let mut r = y.to_vec();
    r[0] = 1 - y[0];
    r
}

fn check_halfspace(x: &[i64], y: &[i64]) -> Result<()> {
    if x[0] <= 0 || y[0] <= 0 {
        return invalid("sites must lie in H⁺ (first coordinate > 0)");
    }
    Ok(())
}

/// p_t^+(x,y) = p_t(x,y) + p_t(x,y*) for the walk whose jumps out of H⁺ are suppressed.
pub fn halfspace_transition(kernel: &Kernel, t: f64, x: &[i64], y: &[i64]) -> Result<f64> {
    check_halfspace(x, y)?;
    srw_only(kernel)?;
    let z: Vec<i64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let zs: Vec<i64> = reflect(y).iter().zip(x).map(|(a, b)| a - b).collect();
    Ok(transition_prob(kernel, t, &z)? + transition_prob(kernel, t, &zs)?)
}

/// Discrete n-step version of `halfspace_transition`.
pub fn halfspace_n_step(d: usize, n: usize, x: &[i64], y: &[i64]) -> Result<f64> {
    check_halfspace(x, y)?;
    let z: Vec<i64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let zs: Vec<i64> = reflect(y).iter().zip(x).map(|(a, b)| a - b).collect();
    Ok(srw_n_step(d, n, &z) + srw_n_step(d, n, &zs))
}

/// Half-space Green function G⁺(x,y) = ∫₀^∞ p_t^+(x,y) dt.
pub fn halfspace_green(kernel: &Kernel, x: &[i64], y: &[i64]) -> Result<f64> {
    check_halfspace(x, y)?;
    let z: Vec<i64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let zs: Vec<i64> = reflect(y).iter().zip(x).map(|(a, b)| a - b).collect();
    Ok(green_at(kernel, &z, 0.0)? + green_at(kernel, &zs, 0.0)?)
}

/// Fitted constant C = max_t p_t(0,0)(1+t)^{d/2} over a geometric grid in [0, t_max].
pub fn fit_decay_constant(kernel: &Kernel, t_max: f64, points: usize) -> Result<f64> {
    let zero = vec![0; kernel.d];
    let mut c: f64 = 1.0;
    for i in 0..points {
        let t = (t_max + 1.0).powf(i as f64 / (points - 1) as f64) - 1.0;
        let p = transition_prob(kernel, t, &zero)?;
        c = c.max(p * (1.0 + t).powf(kernel.d as f64 / 2.0));
    }
    Ok(c)
}

/// Table of p_t(0, z) for z in the ℓ^∞ window of radius `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatKernelTable {
    pub kernel: Kernel,
    pub times: Vec<f64>,
    pub radius: usize,
    pub tol: f64,
    /// values[time][window index], window index as in `window_index`.
    pub values: Vec<Vec<f64>>,
}

impl HeatKernelTable {
    pub fn build(kernel: &Kernel, times: &[f64], radius: usize, tol: f64) -> Result<Self> {
        let w = 2 * radius + 1;
        let size = w.pow(kernel.d as u32);
        let mut values = Vec::with_capacity(times.len());
        for &t in times {
            if t < 0.0 {
                return invalid("negative time in table");
            }
            let row = if kernel.is_srw() {
                let q = q_seq(radius, kernel.rate * t / kernel.d as f64);
                (0..size)
                    .map(|i| {
                        Self::coords_of(kernel.d, radius, i)
                            .iter()
                            .map(|m| q[m.unsigned_abs() as usize])
                            .product()
                    })
                    .collect()
            } else {
                (0..size)
                    .map(|i| transition_prob(kernel, t, &Self::coords_of(kernel.d, radius, i)))
                    .collect::<Result<Vec<_>>>()?
            };
            values.push(row);
        }
        Ok(Self {
            kernel: kernel.clone(),
            times: times.to_vec(),
            radius,
            tol,
            values,
        })
    }

    pub fn coords_of(d: usize, radius: usize, mut i: usize) -> Vec<i64> {
        let w = 2 * radius + 1;
        (0..d)
            .map(|_| {
                let c = (i % w) as i64 - radius as i64;
                i /= w;
                c
            })
            .collect()
    }

    pub fn window_index(&self, z: &[i64]) -> Option<usize> {
        let w = (2 * self.radius + 1) as i64;
        let r = self.radius as i64;
        let mut i = 0i64;
        for x in z.iter().rev() {
            if x.abs() > r {
                return None;
            }
            i = i * w + x + r;
        }
        Some(i as usize)
    }

    pub fn get(&self, time_index: usize, z: &[i64]) -> f64 {
        self.window_index(z)
            .map(|i| self.values[time_index][i])
            .unwrap_or(0.0)
    }

    /// Cache key (d, rate, window, tolerance).
    pub fn cache_key(kernel: &Kernel, radius: usize, tol: f64) -> String {
        format!(
            "hk_d{}_rate{:e}_w{}_tol{:e}{}",
            kernel.d,
            kernel.rate,
            radius,
            tol,
            if kernel.is_srw() { "" } else { "_gen" }
        )
    }

    /// Columnar text: header then `time<TAB>displacement<TAB>value` rows.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# d={} rate={:e} window={} tol={:e}\ntime\tdisplacement\tvalue\n",
            self.kernel.d, self.kernel.rate, self.radius, self.tol
        );
        for (t, row) in self.times.iter().zip(&self.values) {
            for (i, v) in row.iter().enumerate() {
                let z = Self::coords_of(self.kernel.d, self.radius, i);
                let zs: Vec<String> = z.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(s, "{t:e}\t{}\t{v:.17e}", zs.join(","));
            }
        }
        s
    }

    pub fn from_text(kernel: &Kernel, radius: usize, tol: f64, text: &str) -> Result<Self> {
        let mut times: Vec<f64> = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        let size = (2 * radius + 1).pow(kernel.d as u32);
        for line in text.lines() {
            if line.starts_with('#') || line.starts_with("time") || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!("bad row: {line}")));
            }
            let t: f64 = cols[0].parse().map_err(|_| Error::Parse(cols[0].into()))?;
            let v: f64 = cols[2].parse().map_err(|_| Error::Parse(cols[2].into()))?;
            if times.last() != Some(&t) {
                times.push(t);
                values.push(Vec::with_capacity(size));
            }
            values.last_mut().unwrap().push(v);
        }
        if values.iter().any(|r| r.len() != size) {
            return Err(Error::Parse("table rows do not match window size".into()));
        }
        Ok(Self {
            kernel: kernel.clone(),
            times,
            radius,
            tol,
            values,
        })
    }

    /// Loads the table from the cache directory when present and matching,
    /// otherwise builds it and writes it there.
    pub fn load_or_build(
        dir: &Path,
        kernel: &Kernel,
        times: &[f64],
        radius: usize,
        tol: f64,
    ) -> Result<Self> {
        let path: PathBuf = dir.join(format!("{}.tsv", Self::cache_key(kernel, radius, tol)));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(t) = Self::from_text(kernel, radius, tol, &text) {
                if t.times == times {
                    return Ok(t);
                }
            }
        }
        let table = Self::build(kernel, times, radius, tol)?;
        std::fs::create_dir_all(dir)?;
        std::fs::write(&path, table.to_text())?;
        Ok(table)
    }

    /// Cache directory from the environment, if set.
    pub fn cache_dir() -> Option<PathBuf> {
        std::env::var_os(CACHE_ENV).map(PathBuf::from)
    }
}

/// Re-export for callers that need raw scaled Bessel values.
pub use bessel::q_seq as srw_1d_probabilities;
