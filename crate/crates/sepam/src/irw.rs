//! Independent random walks: simulation, exponential functionals by the
//! single-walk product formula, and the comparison with exclusion.

use crate::error::{invalid, Error, Result};
use crate::exact::{se_exp_functional_all, se_value_at};
use crate::exclusion::Configuration;
use crate::fields::{solve_cauchy, CauchyMode, CauchyProblem, Domain, Source};
use crate::lattice::{Kernel, Torus};
use crate::numerics::dense::expm;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

/// Independent walkers on a torus with their jump skeletons up to `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkEnsemble {
    pub torus: Torus,
    pub kernel: Kernel,
    pub horizon: f64,
    pub starts: Vec<usize>,
    /// Per particle: (jump time, new site), increasing in time.
    pub paths: Vec<Vec<(f64, usize)>>,
}

impl WalkEnsemble {
    pub fn sample<R: Rng>(
        torus: Torus,
        kernel: Kernel,
        starts: Vec<usize>,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel.d != torus.d {
            return invalid("kernel and torus dimensions differ");
        }
        if !(horizon >= 0.0) {
            return invalid("horizon must be ≥ 0");
        }
        if starts.iter().any(|s| *s >= torus.sites()) {
            return invalid("start outside torus");
        }
        let exp = Exp::new(kernel.rate).map_err(|_| Error::InvalidParameter("rate".into()))?;
        let total: f64 = kernel.offsets.iter().map(|o| o.1).sum();
        let paths = starts
            .iter()
            .map(|&s| {
                let mut path = Vec::new();
                let mut x = s;
                let mut t = exp.sample(rng);
                while t <= horizon {
                    let mut u = rng.random::<f64>() * total;
                    let mut k = 0;
                    while k + 1 < kernel.offsets.len() && u >= kernel.offsets[k].1 {
                        u -= kernel.offsets[k].1;
                        k += 1;
                    }
                    x = torus.shift(x, &kernel.offsets[k].0);
                    path.push((t, x));
                    t += exp.sample(rng);
                }
                path
            })
            .collect();
        Ok(Self {
            torus,
            kernel,
            horizon,
            starts,
            paths,
        })
    }

    /// Site of particle `i` at time t.
    pub fn position(&self, i: usize, t: f64) -> usize {
        let p = &self.paths[i];
        let k = p.partition_point(|e| e.0 <= t);
        if k == 0 {
            self.starts[i]
        } else {
            p[k - 1].1
        }
    }
}

/// Occupation counts of all particles at time t.
pub fn evolve_irw(ensemble: &WalkEnsemble, t: f64) -> Result<Vec<u32>> {
    if t > ensemble.horizon {
        return invalid("t exceeds the ensemble horizon");
    }
    let mut counts = vec![0u32; ensemble.torus.sites()];
    for i in 0..ensemble.starts.len() {
        counts[ensemble.position(i, t)] += 1;
    }
    Ok(counts)
}

/// K(z,s) as a sum of cells value·1{site}·1{t0 ≤ s < t1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction {
    pub torus: Torus,
    /// (site, t0, t1, value).
    pub cells: Vec<(usize, f64, f64, f64)>,
}

impl WeightFunction {
    pub fn zero(torus: Torus) -> Self {
        Self {
            torus,
            cells: vec![],
        }
    }

    /// value·1_S(z)·1_{[t0,t1)}(s).
    pub fn indicator(torus: Torus, sites: &[usize], t0: f64, t1: f64, value: f64) -> Result<Self> {
        if !(t0 >= 0.0 && t1 >= t0) {
            return invalid("cell times must satisfy 0 ≤ t0 ≤ t1");
        }
        if sites.iter().any(|s| *s >= torus.sites()) {
            return invalid("cell site outside torus");
        }
        Ok(Self {
            torus,
            cells: sites.iter().map(|s| (*s, t0, t1, value)).collect(),
        })
    }

    pub fn sign_uniform(&self) -> bool {
        self.cells.iter().all(|c| c.3 >= 0.0) || self.cells.iter().all(|c| c.3 <= 0.0)
    }

    /// Σ_z ∫₀^∞ |K(z,s)| ds.
    pub fn l1_norm(&self) -> f64 {
        self.cells.iter().map(|c| c.3.abs() * (c.2 - c.1)).sum()
    }

    /// K(·, s).
    pub fn at(&self, s: f64) -> Vec<f64> {
        let mut k = vec![0.0; self.torus.sites()];
        for &(z, t0, t1, v) in &self.cells {
            if s >= t0 && s < t1 {
                k[z] += v;
            }
        }
        k
    }

    /// Forward-time pieces (duration, K) partitioning [0, t].
    pub fn pieces(&self, t: f64) -> Vec<(f64, Vec<f64>)> {
        let mut cuts = vec![0.0, t];
        for c in &self.cells {
            for s in [c.1, c.2] {
                if s > 0.0 && s < t {
                    cuts.push(s);
                }
            }
        }
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup();
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| (w[1] - w[0], self.at(0.5 * (w[0] + w[1]))))
            .collect()
    }
}

/// v(x,t) = E_x exp ∫₀ᵗ K(Y_s, s) ds for one walker, all x, via the Cauchy
/// problem with the time-reversed source c(·,τ) = K(·, t − τ).
pub fn single_walk_values(
    torus: &Torus,
    kernel: &Kernel,
    k: &WeightFunction,
    t: f64,
) -> Result<Vec<f64>> {
    let pieces = k.pieces(t);
    let mut starts = Vec::new();
    let mut values = Vec::new();
    let mut tau = 0.0;
    for (dur, kv) in pieces.iter().rev() {
        starts.push(tau);
        values.push(kv.clone());
        tau += dur;
    }
    if starts.is_empty() {
        starts.push(0.0);
        values.push(vec![0.0; torus.sites()]);
    }
    let problem = CauchyProblem::new(
        Domain::Torus(*torus),
        kernel.clone(),
        Source::Piecewise { starts, values },
        t,
    )?;
    let sol = solve_cauchy(&problem, &[], &[t], &CauchyMode::Series { tol: 1e-14 })?;
    let v = sol.full_v.expect("deterministic mode").remove(0);
    Ok(v)
}

/// Declared overflow bound for single-walk values.
pub const OVERFLOW_BOUND: f64 = 1e300;

/// E^{IRW}_{ν_ρ} exp[Σ_z ∫₀ᵗ K(z,s)ξ̃_s(z) ds] = ∏_x (1 − ρ + ρ v(x,t)),
/// accumulated in log form; returns the logarithm.
pub fn irw_log_exp_functional(
    rho: f64,
    k: &WeightFunction,
    t: f64,
    torus: &Torus,
    kernel: &Kernel,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return invalid("ρ must lie in [0,1]");
    }
    if !k.sign_uniform() {
        return invalid("K must be sign-uniform");
    }
    let v = single_walk_values(torus, kernel, k, t)?;
    if v.iter().any(|x| !(x.is_finite() && *x < OVERFLOW_BOUND)) {
        return Err(Error::Divergent(
            "single-walk solution exceeds the overflow bound".into(),
        ));
    }
    Ok(v.iter().map(|x| (rho * (x - 1.0)).ln_1p()).sum())
}

pub fn irw_exp_functional(
    rho: f64,
    k: &WeightFunction,
    t: f64,
    torus: &Torus,
    kernel: &Kernel,
) -> Result<f64> {
    Ok(irw_log_exp_functional(rho, k, t, torus, kernel)?.exp())
}

/// E^{IRW}_η for a fixed configuration: ∏_{x: η(x)=1} v(x,t).
pub fn irw_exp_functional_fixed(
    eta: &Configuration,
    k: &WeightFunction,
    t: f64,
    kernel: &Kernel,
) -> Result<f64> {
    if !k.sign_uniform() {
        return invalid("K must be sign-uniform");
    }
    let v = single_walk_values(&eta.torus, kernel, k, t)?;
    Ok((0..eta.torus.sites())
        .filter(|x| eta.get(*x) == 1)
        .map(|x| v[x])
        .product())
}

/// SE against IRW for one weight function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rho: f64,
    pub t: f64,
    pub weight: WeightFunction,
    pub se_value: f64,
    /// Standard error of the SE value (0 when exact).
    pub se_stderr: f64,
    pub irw_value: f64,
    pub margin: f64,
    pub se_method: String,
    pub irw_method: String,
    /// Smallest margin over all fixed starting configurations (exact only).
    pub min_fixed_margin: Option<f64>,
    pub tolerance: f64,
    pub violation: bool,
}

/// Largest state space for which the SE side is computed exactly.
pub const EXACT_SE_STATES: usize = 1 << 14;

/// Compares E_{ν_ρ} exp[∫ΣKξ] under SE and IRW; the SE side is exact up to
/// 2^14 states and Monte Carlo (n trials, 4σ rule) beyond.
pub fn compare_se_irw(
    torus: &Torus,
    kernel: &Kernel,
    rho: f64,
    k: &WeightFunction,
    t: f64,
    tolerance: f64,
    mc: Option<(usize, u64)>,
) -> Result<ComparisonReport> {
    if !k.sign_uniform() {
        return invalid("K must be sign-uniform");
    }
    let irw_value = irw_exp_functional(rho, k, t, torus, kernel)?;
    let pieces = k.pieces(t);
    let (se_value, se_stderr, method, min_fixed) =
        if (1usize << torus.sites().min(63)) <= EXACT_SE_STATES {
            let all = se_exp_functional_all(torus, kernel, &pieces)?;
            let n = torus.sites() as i32;
            let mean: f64 = all
                .iter()
                .enumerate()
                .map(|(m, v)| {
                    let c = (m as u64).count_ones() as i32;
                    rho.powi(c) * (1.0 - rho).powi(n - c) * v
                })
                .sum();
            let v = single_walk_values(torus, kernel, k, t)?;
            let mut min_margin = f64::INFINITY;
            for mask in 0..all.len() as u64 {
                let eta = Configuration::from_mask(*torus, mask);
                let irw: f64 = (0..torus.sites())
                    .filter(|x| mask >> x & 1 == 1)
                    .map(|x| v[x])
                    .product();
                min_margin = min_margin.min(irw - se_value_at(&all, &eta));
            }
            (mean, 0.0, "exact".to_string(), Some(min_margin))
        } else {
            let (n, seed) = mc.ok_or_else(|| Error::CapExceeded {
                states: 1u128 << torus.sites().min(127),
                cap: EXACT_SE_STATES as u128,
            })?;
            let est = crate::montecarlo::se_functional_mc(torus, kernel, rho, &pieces, n, seed)?;
            (est.mean, est.stderr, "monte-carlo".to_string(), None)
        };
    let margin = irw_value - se_value;
    let violation = if se_stderr == 0.0 {
        margin < -tolerance || min_fixed.is_some_and(|m| m < -tolerance)
    } else {
        margin < -4.0 * se_stderr
    };
    Ok(ComparisonReport {
        rho,
        t,
        weight: k.clone(),
        se_value,
        se_stderr,
        irw_value,
        margin,
        se_method: method,
        irw_method: "product formula".into(),
        min_fixed_margin: min_fixed,
        tolerance,
        violation,
    })
}

/// E_η exp[r Σ_j ξ_{s_j}(z_j)] for SE and IRW at fixed space-time points,
/// both exact; returns (SE, IRW).
pub fn point_functional_se_irw(
    eta: &Configuration,
    kernel: &Kernel,
    points: &[(usize, f64)],
    r: f64,
) -> Result<(f64, f64)> {
    let torus = eta.torus;
    let n = torus.sites();
    if points.iter().any(|p| p.0 >= n || p.1 < 0.0) {
        return invalid("points must be torus sites at non-negative times");
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    // SE: backward recursion over the sorted times on the configuration space
    let gen = crate::exact::build_se_generator(&torus, kernel)?.to_dense();
    let dim = gen.nrows();
    let mut f = nalgebra::DVector::from_element(dim, 1.0);
    let mut later = pts.last().map(|p| p.1).unwrap_or(0.0);
    for &(z, s) in pts.iter().rev() {
        f = expm(&(&gen * (later - s))) * f;
        for m in 0..dim {
            if m >> z & 1 == 1 {
                f[m] *= r.exp();
            }
        }
        later = s;
    }
    f = expm(&(&gen * later)) * f;
    let se = f[eta.mask() as usize];
    // IRW: one walker, same recursion on sites
    let mut q = DMatrix::zeros(n, n);
    for x in 0..n {
        for (dz, w) in &kernel.offsets {
            let y = torus.shift(x, dz);
            if y != x {
                q[(x, y)] += kernel.rate * w;
                q[(x, x)] -= kernel.rate * w;
            }
        }
    }
    let mut g = nalgebra::DVector::from_element(n, 1.0);
    let mut later = pts.last().map(|p| p.1).unwrap_or(0.0);
    for &(z, s) in pts.iter().rev() {
        g = expm(&(&q * (later - s))) * g;
        g[z] *= r.exp();
        later = s;
    }
    g = expm(&(&q * later)) * g;
    let irw = (0..n).filter(|x| eta.get(*x) == 1).map(|x| g[x]).product();
    Ok((se, irw))
}
