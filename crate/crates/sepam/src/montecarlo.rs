//! Monte Carlo Feynman–Kac estimators: moments and Lyapunov curves on tori,
//! the box-blocking lower bound, walk ranges, and the Gaussian-regime probe.

use crate::error::{invalid, Error, Result};
use crate::exact::OperatorSpec;
use crate::exclusion::{fill_events, sample_initial_with, torus_bonds, Configuration, LinkEvent};
use crate::lattice::{green_at, srw_kernel, Kernel, Torus};
use crate::numerics::bessel::q_seq;
use crate::numerics::gauss::{CompositeRule, GaussLegendre};
use crate::one_kappa;
use crate::rng::par_trials;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Monte Carlo estimate with its reproducibility data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
    /// log of the mean and its jackknife standard error (exponential functionals).
    pub log_mean: f64,
    pub log_stderr: f64,
}

impl McEstimate {
    /// Plain sample mean with stderr = std/√n.
    pub fn from_samples(x: &[f64], seed: u64) -> Self {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
        } else {
            0.0
        };
        let stderr = (var / n as f64).sqrt();
        Self {
            mean,
            stderr,
            n,
            seed,
            log_mean: mean.ln(),
            log_stderr: if mean > 0.0 { stderr / mean } else { f64::NAN },
        }
    }

    /// Mean of exp(logs) accumulated relative to the largest sample, with a
    /// jackknife standard error for the log of the mean.
    pub fn from_log_samples(logs: &[f64], seed: u64) -> Self {
        let n = logs.len();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        let mw = s / n as f64;
        let var = if n > 1 {
            w.iter().map(|v| (v - mw).powi(2)).sum::<f64>() / (n as f64 - 1.0)
        } else {
            0.0
        };
        let log_mean = m + mw.ln();
        let log_stderr = if n > 1 {
            let jack: Vec<f64> = w
                .iter()
                .map(|wi| ((s - wi) / (n as f64 - 1.0)).ln())
                .collect();
            let jm = jack.iter().sum::<f64>() / n as f64;
            ((n as f64 - 1.0) / n as f64 * jack.iter().map(|j| (j - jm).powi(2)).sum::<f64>())
                .sqrt()
        } else {
            0.0
        };
        Self {
            mean: log_mean.exp(),
            stderr: m.exp() * (var / n as f64).sqrt(),
            n,
            seed,
            log_mean,
            log_stderr,
        }
    }

    /// Ratio of the largest sample weight to the total (near 1 signals collapse).
    pub fn max_weight_fraction(logs: &[f64]) -> f64 {
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        1.0 / logs.iter().map(|l| (l - m).exp()).sum::<f64>()
    }
}

fn check_trials(n: usize) -> Result<()> {
    if n < 2 {
        invalid("need at least two trials")
    } else {
        Ok(())
    }
}

/// ξ_t(y) averaged over link schedules for a fixed initial configuration.
pub fn mean_occupation(
    torus: &Torus,
    kernel: &Kernel,
    eta: &Configuration,
    y: usize,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_trials(n)?;
    if !(t >= 0.0) {
        return invalid("t must be ≥ 0");
    }
    let bonds = torus_bonds(torus, kernel)?;
    let samples = par_trials(n, seed, |_, rng| {
        let mut events = Vec::new();
        fill_events(&bonds, t, rng, &mut events);
        // follow the site backwards: ξ_t(y) = η(position of the dual walker)
        let mut x = y;
        for e in events.iter().rev() {
            let b = bonds[e.bond];
            if x == b.a {
                x = b.b;
            } else if x == b.b {
                x = b.a;
            }
        }
        eta.get(x) as f64
    });
    Ok(McEstimate::from_samples(&samples, seed))
}

/// Catalyst and walkers for one Feynman–Kac trial.
struct MomentSim<'a> {
    torus: Torus,
    bonds: Vec<crate::exclusion::Bond>,
    neighbours: Vec<Vec<usize>>,
    spec: &'a OperatorSpec,
}

impl<'a> MomentSim<'a> {
    fn new(spec: &'a OperatorSpec) -> Result<Self> {
        spec.validate()?;
        let torus = spec.torus;
        let unit = srw_kernel(torus.d, 1.0)?;
        Ok(Self {
            torus,
            bonds: torus_bonds(&torus, &spec.kernel)?,
            neighbours: (0..torus.sites())
                .map(|x| {
                    unit.offsets
                        .iter()
                        .map(|(z, _)| torus.shift(x, z))
                        .collect()
                })
                .collect(),
            spec,
        })
    }

    /// γ ∫₀ᵗ Σ_q ξ_s(X_q(s)) ds along one sampled trajectory.
    fn exponent<R: Rng>(
        &self,
        t: f64,
        initial: Option<&Configuration>,
        rng: &mut R,
        events: &mut Vec<LinkEvent>,
    ) -> f64 {
        let mut eta = match (initial, self.spec.sector) {
            (Some(c), _) => c.clone(),
            (None, Some(k)) => sample_sector(self.torus, k, rng),
            (None, None) => sample_initial_with(self.torus, self.spec.rho, rng),
        };
        fill_events(&self.bonds, t, rng, events);
        let p = self.spec.p;
        let mut pos = vec![0usize; p];
        let walk_rate = 2.0 * self.torus.d as f64 * self.spec.kappa;
        let exp = (walk_rate > 0.0).then(|| Exp::new(walk_rate).expect("positive rate"));
        let mut next_jump: Vec<f64> = (0..p)
            .map(|_| exp.as_ref().map(|e| e.sample(rng)).unwrap_or(f64::INFINITY))
            .collect();
        let mut now = 0.0;
        let mut acc = 0.0;
        let mut ev = 0usize;
        let deg = self.neighbours[0].len();
        loop {
            let count = pos.iter().filter(|x| eta.get(**x) == 1).count() as f64;
            let (wq, wt) =
                next_jump
                    .iter()
                    .enumerate()
                    .fold((usize::MAX, f64::INFINITY), |b, (q, s)| {
                        if *s < b.1 {
                            (q, *s)
                        } else {
                            b
                        }
                    });
            let et = events.get(ev).map(|e| e.time).unwrap_or(f64::INFINITY);
            let next = wt.min(et).min(t);
            acc += count * (next - now);
            now = next;
            if now >= t {
                break;
            }
            if et <= wt {
                let b = self.bonds[events[ev].bond];
                eta.swap(b.a, b.b);
                ev += 1;
            } else {
                let k = rng.random_range(0..deg);
                pos[wq] = self.neighbours[pos[wq]][k];
                next_jump[wq] += exp
                    .as_ref()
                    .expect("walkers move only for κ > 0")
                    .sample(rng);
            }
        }
        self.spec.gamma * acc
    }
}

/// Uniform configuration with exactly k particles.
pub fn sample_sector<R: Rng>(torus: Torus, k: usize, rng: &mut R) -> Configuration {
    let n = torus.sites();
    let mut bits = vec![0u8; n];
    for i in rand::seq::index::sample(rng, n, k.min(n)) {
        bits[i] = 1;
    }
    Configuration::new(torus, bits).expect("binary values")
}

/// E_{ν_ρ,0} exp[γ∫₀ᵗ Σ_q ξ_s(X_q(s)) ds]: one catalyst trajectory and p fresh
/// rate-2dκ walkers per trial.
pub fn estimate_moment(spec: &OperatorSpec, t: f64, n: usize, seed: u64) -> Result<McEstimate> {
    estimate_moment_from(spec, None, t, n, seed)
}

/// As `estimate_moment`, optionally from a fixed initial configuration.
pub fn estimate_moment_from(
    spec: &OperatorSpec,
    initial: Option<&Configuration>,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_trials(n)?;
    if !(t >= 0.0) {
        return invalid("t must be ≥ 0");
    }
    let sim = MomentSim::new(spec)?;
    let logs = par_trials(n, seed, |_, rng| {
        let mut events = Vec::new();
        sim.exponent(t, initial, rng, &mut events)
    });
    Ok(McEstimate::from_log_samples(&logs, seed))
}

/// E_{ν_ρ} exp[∫₀ᵗ Σ_z K(z,s)ξ_s(z) ds] for K given as forward-time pieces.
pub fn se_functional_mc(
    torus: &Torus,
    kernel: &Kernel,
    rho: f64,
    pieces: &[(f64, Vec<f64>)],
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_trials(n)?;
    let bonds = torus_bonds(torus, kernel)?;
    let horizon: f64 = pieces.iter().map(|p| p.0).sum();
    let logs = par_trials(n, seed, |_, rng| {
        let mut eta = sample_initial_with(*torus, rho, rng);
        let mut events = Vec::new();
        fill_events(&bonds, horizon, rng, &mut events);
        let mut acc = 0.0;
        let mut start = 0.0;
        let mut ev = 0;
        for (dur, k) in pieces {
            let end = start + dur;
            let mut dot: f64 = (0..torus.sites()).map(|x| k[x] * eta.get(x) as f64).sum();
            let mut now = start;
            while ev < events.len() && events[ev].time < end {
                let e = events[ev];
                acc += dot * (e.time - now);
                now = e.time;
                let b = bonds[e.bond];
                if eta.get(b.a) != eta.get(b.b) {
                    let sign = if eta.get(b.a) == 1 { 1.0 } else { -1.0 };
                    dot += sign * (k[b.b] - k[b.a]);
                    eta.swap(b.a, b.b);
                }
                ev += 1;
            }
            acc += dot * (end - now);
            start = end;
        }
        acc
    });
    Ok(McEstimate::from_log_samples(&logs, seed))
}

/// Λ_p(t) estimates over a time grid with the large-t plateau fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRun {
    pub spec: OperatorSpec,
    pub t_grid: Vec<f64>,
    pub scaled: bool,
    pub lambda: Vec<f64>,
    pub lambda_stderr: Vec<f64>,
    pub estimates: Vec<McEstimate>,
    /// Intercept a of Λ(t) ≈ a + b/t over the last third of the grid.
    pub plateau: f64,
    pub plateau_stderr: f64,
    pub fit_window_ok: bool,
    /// ργ ≤ Λ ≤ γ at every grid point within 3σ (unscaled runs).
    pub bounds_ok: bool,
    pub max_weight_fraction: Vec<f64>,
}

/// Λ_p(t) (or Λ₁*(κ;t) = Λ₁(t/κ)/κ when `scaled`) on a grid.
pub fn lambda_curve(
    spec: &OperatorSpec,
    t_grid: &[f64],
    n: usize,
    seed: u64,
    scaled: bool,
) -> Result<LyapunovRun> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return invalid("t grid must be positive and strictly increasing");
    }
    if scaled && (spec.p != 1 || !(spec.kappa > 0.0)) {
        return invalid("scaled curve needs p = 1 and κ > 0");
    }
    check_trials(n)?;
    let sim = MomentSim::new(spec)?;
    let p = spec.p as f64;
    let mut lambda = Vec::new();
    let mut lse = Vec::new();
    let mut ests = Vec::new();
    let mut mwf = Vec::new();
    for (k, &t) in t_grid.iter().enumerate() {
        let tt = if scaled { t / spec.kappa } else { t };
        let s = seed
            .wrapping_add(k as u64)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let logs = par_trials(n, s, |_, rng| {
            let mut events = Vec::new();
            sim.exponent(tt, None, rng, &mut events)
        });
        mwf.push(McEstimate::max_weight_fraction(&logs));
        let e = McEstimate::from_log_samples(&logs, s);
        let scale = if scaled { spec.kappa * tt } else { p * tt };
        lambda.push(e.log_mean / scale);
        lse.push(e.log_stderr / scale);
        ests.push(e);
    }
    let start = t_grid.len() - t_grid.len().div_ceil(3);
    let (plateau, plateau_stderr, fit_ok) =
        inverse_t_fit(&t_grid[start..], &lambda[start..], &lse[start..]);
    let bounds_ok = scaled
        || lambda.iter().zip(&lse).all(|(l, s)| {
            *l >= spec.rho * spec.gamma - 3.0 * s - 1e-12 && *l <= spec.gamma + 3.0 * s + 1e-12
        });
    Ok(LyapunovRun {
        spec: spec.clone(),
        t_grid: t_grid.to_vec(),
        scaled,
        lambda,
        lambda_stderr: lse,
        estimates: ests,
        plateau,
        plateau_stderr,
        fit_window_ok: fit_ok,
        bounds_ok,
        max_weight_fraction: mwf,
    })
}

/// Weighted least squares y ≈ a + b/t; returns (a, se(a), window ok).
fn inverse_t_fit(t: &[f64], y: &[f64], se: &[f64]) -> (f64, f64, bool) {
    if t.len() < 2 {
        let last = y.last().copied().unwrap_or(f64::NAN);
        return (last, se.last().copied().unwrap_or(f64::NAN), false);
    }
    let w: Vec<f64> = se
        .iter()
        .map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 1.0 })
        .collect();
    let (mut s0, mut s1, mut s2, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((ti, yi), wi) in t.iter().zip(y).zip(&w) {
        let x = 1.0 / ti;
        s0 += wi;
        s1 += wi * x;
        s2 += wi * x * x;
        sy += wi * yi;
        sxy += wi * x * yi;
    }
    let det = s0 * s2 - s1 * s1;
    if det.abs() < 1e-300 {
        return (sy / s0, (1.0 / s0).sqrt(), false);
    }
    let a = (s2 * sy - s1 * sxy) / det;
    (a, (s2 / det).sqrt(), true)
}

/// Range (number of distinct visited sites) of the kernel walk on ℤ^d.
pub fn range_mean(kernel: &Kernel, t: f64, n: usize, seed: u64) -> Result<McEstimate> {
    check_trials(n)?;
    if !(t >= 0.0) {
        return invalid("t must be ≥ 0");
    }
    let exp = Exp::new(kernel.rate).map_err(|_| Error::InvalidParameter("rate".into()))?;
    let samples = par_trials(n, seed, |_, rng| {
        let mut seen: HashSet<Vec<i64>> = HashSet::new();
        let mut x = vec![0i64; kernel.d];
        seen.insert(x.clone());
        let mut s = exp.sample(rng);
        while s <= t {
            let z = pick_offset(kernel, rng);
            for (a, b) in x.iter_mut().zip(z) {
                *a += b;
            }
            seen.insert(x.clone());
            s += exp.sample(rng);
        }
        seen.len() as f64
    });
    Ok(McEstimate::from_samples(&samples, seed))
}

fn pick_offset<'k, R: Rng>(kernel: &'k Kernel, rng: &mut R) -> &'k [i64] {
    let mut u = rng.random::<f64>();
    for (z, w) in &kernel.offsets {
        if u < *w {
            return z;
        }
        u -= w;
    }
    &kernel.offsets[kernel.offsets.len() - 1].0
}

/// Box-blocking lower bound on Λ₁(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockingBound {
    pub radius: usize,
    pub box_sites: usize,
    /// P(ξ_s ≡ 1 on Q for all s ≤ t).
    pub catalyst: McEstimate,
    /// P(X^κ stays in Q up to t).
    pub walk: McEstimate,
    /// E R_t of the catalyst kernel walk.
    pub range: McEstimate,
    /// γ + (1/t) log[P_cat·P_walk].
    pub bound: f64,
    /// γ − |Q| log(1/ρ) E R_t / t + (1/t) log P_walk.
    pub analytic_bound: f64,
    /// ρ^{|Q|·E R_t}.
    pub jensen_probability: f64,
    pub zero_count: bool,
}

/// Lower bound from keeping the walker in Q = [−r, r]^d and requiring ξ ≡ 1 on Q.
pub fn blocking_lower_bound(
    spec: &OperatorSpec,
    radius: usize,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<BlockingBound> {
    check_trials(n)?;
    spec.validate()?;
    if !(t >= 0.0) {
        return invalid("t must be ≥ 0");
    }
    let torus = spec.torus;
    if 2 * radius + 1 > torus.l {
        return invalid("box does not fit in the torus");
    }
    let d = torus.d;
    let r = radius as i64;
    let in_box: Vec<bool> = (0..torus.sites())
        .map(|i| {
            torus
                .wrap_displacement(&torus.coords(i))
                .iter()
                .all(|c| c.abs() <= r)
        })
        .collect();
    let box_sites = in_box.iter().filter(|b| **b).count();
    let bonds = torus_bonds(&torus, &spec.kernel)?;
    let cat = par_trials(n, seed, |_, rng| {
        let mut eta = sample_initial_with(torus, spec.rho, rng);
        if (0..torus.sites()).any(|x| in_box[x] && eta.get(x) == 0) {
            return 0.0;
        }
        let mut events = Vec::new();
        fill_events(&bonds, t, rng, &mut events);
        for e in &events {
            let b = bonds[e.bond];
            eta.swap(b.a, b.b);
            if (in_box[b.a] && eta.get(b.a) == 0) || (in_box[b.b] && eta.get(b.b) == 0) {
                return 0.0;
            }
        }
        1.0
    });
    let catalyst = McEstimate::from_samples(&cat, seed);
    let walk_rate = 2.0 * d as f64 * spec.kappa;
    let unit = srw_kernel(d, 1.0)?;
    let walk_seed = seed ^ 0x5EED_0001;
    let stay = par_trials(n, walk_seed, |_, rng| {
        if walk_rate == 0.0 {
            return 1.0;
        }
        let exp = Exp::new(walk_rate).expect("positive rate");
        let mut x = vec![0i64; d];
        let mut s = exp.sample(rng);
        while s <= t {
            let z = pick_offset(&unit, rng);
            for (a, b) in x.iter_mut().zip(z) {
                *a += b;
            }
            if x.iter().any(|c| c.abs() > r) {
                return 0.0;
            }
            s += exp.sample(rng);
        }
        1.0
    });
    let walk = McEstimate::from_samples(&stay, walk_seed);
    let range = range_mean(&spec.kernel, t, n, seed ^ 0x5EED_0002)?;
    let zero_count = catalyst.mean == 0.0 || walk.mean == 0.0;
    let g = spec.gamma;
    let (bound, analytic) = if t == 0.0 {
        (g, g)
    } else if zero_count {
        (f64::NEG_INFINITY, f64::NEG_INFINITY)
    } else {
        (
            g + (catalyst.mean * walk.mean).ln() / t,
            g - box_sites as f64 * (1.0 / spec.rho).ln() * range.mean / t + walk.mean.ln() / t,
        )
    };
    Ok(BlockingBound {
        radius,
        box_sites,
        jensen_probability: spec.rho.powf(box_sites as f64 * range.mean),
        catalyst,
        walk,
        range,
        bound,
        analytic_bound: analytic,
        zero_count,
    })
}

// ---------------------------------------------------------------------------
// Gaussian-regime probe
// ---------------------------------------------------------------------------

/// F2_z(x) = ∫₀^x (x−τ) g_z(τ) dτ with g_z(τ) = p_{τ/κ+S}(0,z), tabulated per
/// class of sorted |z| on a uniform grid and read by quintic Hermite
/// interpolation from (F2, F1 = F2', g = F2'').
#[derive(Debug, Clone)]
pub struct ProbeTable {
    pub d: usize,
    pub kappa: f64,
    pub shift: f64,
    pub t_max: f64,
    pub h: f64,
    pub radius: usize,
    nodes: usize,
    class_of: Vec<u32>,
    pub classes: usize,
    data: Vec<[f64; 3]>,
    /// Upper bound on the neglected part of (1/t)∫∫ from skipped displacements.
    pub truncation_bound: f64,
}

const SKIP: u32 = u32::MAX;

impl ProbeTable {
    pub fn new(d: usize, kappa: f64, shift: f64, t_max: f64) -> Result<Self> {
        if d == 0 || !(kappa > 0.0) || !(shift >= 0.0) || !(t_max > 0.0) {
            return invalid("probe table needs d ≥ 1, κ > 0, S ≥ 0, t > 0");
        }
        let h = (kappa / 4.0).min(0.25);
        let steps = (t_max / h).ceil() as usize;
        let h = t_max / steps as f64;
        let nodes = steps + 1;
        let x_of = |tau: f64| (tau / kappa + shift) / d as f64;
        let x_max = x_of(t_max);
        // radius: (t/2)·max_τ q_{R+1}(x(τ)) ≤ 1e-9
        let mut radius = 1usize;
        loop {
            let qmax = (0..=64)
                .map(|k| {
                    q_seq(
                        radius + 1,
                        x_max * k as f64 / 64.0 + x_of(0.0) * (1.0 - k as f64 / 64.0),
                    )[radius + 1]
                })
                .fold(0.0, f64::max);
            if 0.5 * t_max * qmax <= 1e-9 {
                break;
            }
            radius += 1;
        }
        let gl = GaussLegendre::new(8);
        // per-node and per-GL-point 1-d factors
        let mut taus = Vec::with_capacity(nodes * 9);
        for k in 0..nodes {
            taus.push(k as f64 * h);
        }
        let mut gl_pts = Vec::with_capacity(steps * 8);
        for k in 0..steps {
            for (x, w) in gl.mapped(k as f64 * h, (k + 1) as f64 * h) {
                gl_pts.push((x, w));
            }
        }
        let qn: Vec<Vec<f64>> = taus.iter().map(|t| q_seq(radius, x_of(*t))).collect();
        let qg: Vec<Vec<f64>> = gl_pts
            .iter()
            .map(|(t, _)| q_seq(radius, x_of(*t)))
            .collect();
        // sorted classes
        let w = radius + 1;
        let total = w.pow(d as u32);
        let mut class_of = vec![SKIP; total];
        let mut data = Vec::new();
        let mut classes = 0usize;
        let mut skipped_max: f64 = 0.0;
        let mut key_to_class = std::collections::HashMap::new();
        for (idx, slot) in class_of.iter_mut().enumerate() {
            let mut m: Vec<usize> = (0..d).map(|k| idx / w.pow(k as u32) % w).collect();
            m.sort_unstable();
            if let Some(c) = key_to_class.get(&m) {
                *slot = *c;
                continue;
            }
            let g_node: Vec<f64> = qn
                .iter()
                .map(|q| m.iter().map(|mi| q[*mi]).product())
                .collect();
            let gmax = g_node.iter().copied().fold(0.0, f64::max);
            if gmax < 1e-11 {
                skipped_max = skipped_max.max(gmax);
                key_to_class.insert(m, SKIP);
                continue;
            }
            let c = classes as u32;
            classes += 1;
            key_to_class.insert(m.clone(), c);
            *slot = c;
            let (mut f1, mut f2) = (0.0, 0.0);
            data.push([0.0, 0.0, g_node[0]]);
            for k in 0..steps {
                let a = k as f64 * h;
                let b = a + h;
                let mut i1 = 0.0;
                let mut i2 = 0.0;
                for j in 0..8 {
                    let (tau, wt) = gl_pts[k * 8 + j];
                    let g: f64 = m.iter().map(|mi| qg[k * 8 + j][*mi]).product();
                    i1 += wt * g;
                    i2 += wt * (b - tau) * g;
                }
                f2 += h * f1 + i2;
                f1 += i1;
                data.push([f2, f1, g_node[k + 1]]);
            }
        }
        // skipped classes have max over nodes below 1e-11; between nodes the
        // kernel varies by at most a factor e^{2h/κ}
        let skipped_bound = skipped_max.max(1e-11) * (2.0 * h / kappa).exp();
        Ok(Self {
            d,
            kappa,
            shift,
            t_max,
            h,
            radius,
            nodes,
            class_of,
            classes,
            data,
            truncation_bound: 0.5 * t_max * (1e-9 / (0.5 * t_max) + skipped_bound),
        })
    }

    /// Class index of a displacement, None when it is neglected.
    pub fn class(&self, z: &[i64]) -> Option<usize> {
        let w = (self.radius + 1) as i64;
        let mut idx = 0i64;
        let mut stride = 1i64;
        for c in z {
            let a = c.abs();
            if a >= w {
                return None;
            }
            idx += a * stride;
            stride *= w;
        }
        let c = self.class_of[idx as usize];
        (c != SKIP).then_some(c as usize)
    }

    /// F2 for class `c` at x ∈ [0, t_max].
    pub fn f2(&self, c: usize, x: f64) -> f64 {
        let s = (x / self.h).clamp(0.0, (self.nodes - 1) as f64);
        let k = (s as usize).min(self.nodes - 2);
        let u = s - k as f64;
        let base = c * self.nodes + k;
        let [f0, d0, s0] = self.data[base];
        let [f1, d1, s1] = self.data[base + 1];
        let h = self.h;
        quintic_hermite(u, f0, d0 * h, s0 * h * h, f1, d1 * h, s1 * h * h)
    }

    /// (1/t)∫₀ᵗ ds ∫_s^t du g_{X_u − X_s}(u − s) for a piecewise-constant path
    /// given as (start, end, position) segments covering [0, t].
    pub fn path_integral(&self, segments: &[(f64, f64, Vec<i64>)]) -> f64 {
        let t = segments.last().map(|s| s.1).unwrap_or(0.0);
        if t == 0.0 {
            return 0.0;
        }
        let zero = self.class(&vec![0; self.d]).expect("origin class kept");
        let mut acc = 0.0;
        let mut z = vec![0i64; self.d];
        for (i, (ai, bi, xi)) in segments.iter().enumerate() {
            acc += self.f2(zero, bi - ai);
            for (aj, bj, xj) in &segments[i + 1..] {
                for k in 0..self.d {
                    z[k] = xj[k] - xi[k];
                }
                if let Some(c) = self.class(&z) {
                    acc += self.f2(c, bj - ai) - self.f2(c, bj - bi) - self.f2(c, aj - ai)
                        + self.f2(c, aj - bi);
                }
            }
        }
        acc / t
    }
}

/// Quintic Hermite interpolant on [0,1] from values, first and second
/// derivatives (already scaled to the unit interval).
pub fn quintic_hermite(u: f64, f0: f64, d0: f64, s0: f64, f1: f64, d1: f64, s1: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    let u5 = u4 * u;
    f0 * (1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5)
        + d0 * (u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5)
        + s0 * (0.5 * u2 - 1.5 * u3 + 1.5 * u4 - 0.5 * u5)
        + s1 * (0.5 * u3 - u4 + 0.5 * u5)
        + d1 * (-4.0 * u3 + 7.0 * u4 - 3.0 * u5)
        + f1 * (10.0 * u3 - 15.0 * u4 + 6.0 * u5)
}

/// Probe estimate against its first-order value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub d: usize,
    pub kappa: f64,
    pub shift: f64,
    pub t: f64,
    pub estimate: McEstimate,
    /// G_S/(2d·1[κ]) with G_S = ∫_S^∞ p_v(0,0) dv.
    pub target: f64,
    pub relative_gap: f64,
    pub radius: usize,
    pub classes: usize,
    pub truncation_bound: f64,
}

/// Samples rate-2d walks on ℤ^d and averages (1/t)∫₀ᵗ∫_s^t p_{(u−s)/κ+S}(X_s,X_u) du ds.
pub fn asymptotic_probe(
    d: usize,
    kappa: f64,
    shift: f64,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<ProbeResult> {
    if d <= 2 {
        return invalid("the probe needs a transient walk (d ≥ 3)");
    }
    check_trials(n)?;
    let table = ProbeTable::new(d, kappa, shift, t)?;
    let exp = Exp::new(2.0 * d as f64).expect("positive rate");
    let unit = srw_kernel(d, 1.0)?;
    let samples = par_trials(n, seed, |_, rng| {
        let mut segs = Vec::new();
        let mut x = vec![0i64; d];
        let mut s = 0.0;
        loop {
            let e = (s + exp.sample(rng)).min(t);
            segs.push((s, e, x.clone()));
            if e >= t {
                break;
            }
            s = e;
            let z = pick_offset(&unit, rng);
            for (a, b) in x.iter_mut().zip(z) {
                *a += b;
            }
        }
        table.path_integral(&segs)
    });
    let estimate = McEstimate::from_samples(&samples, seed);
    let target = green_at(&unit, &vec![0; d], shift)? / (2.0 * d as f64 * one_kappa(d, kappa));
    Ok(ProbeResult {
        d,
        kappa,
        shift,
        t,
        relative_gap: (estimate.mean - target).abs() / target,
        estimate,
        target,
        radius: table.radius,
        classes: table.classes,
        truncation_bound: table.truncation_bound,
    })
}

/// (1/t)∫₀ᵗ (t−τ) p_{τ/κ+S}(0,0) dτ by direct composite quadrature (frozen walk).
pub fn frozen_path_value(d: usize, kappa: f64, shift: f64, t: f64) -> f64 {
    let rule = CompositeRule::uniform(0.0, t, ((t * 4.0).ceil() as usize).max(8), 20);
    rule.integrate(|tau| (t - tau) * q_seq(0, (tau / kappa + shift) / d as f64)[0].powi(d as i32))
        / t
}
