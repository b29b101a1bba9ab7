//! Exact computations on small tori: the exclusion generator, the joint
//! generator of catalyst and p walkers, moments by matrix exponential, and
//! the exponential-martingale identity.

use crate::error::{invalid, Error, Result};
use crate::exclusion::{torus_bonds, Configuration};
use crate::lattice::{srw_kernel, Kernel, Torus};
use crate::numerics::dense::{expm, log_bilinear_exp, sym_eigen};
use crate::numerics::krylov::{expv_sym, lanczos_top};
use crate::numerics::Csr;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Dimension up to which dense eigendecompositions are used.
pub const DENSE_LIMIT: usize = 1000;

/// Truncated joint system: SE catalyst on a torus and p walkers with
/// generator κΔ, potential γ·Σ_q η(x_q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub torus: Torus,
    /// Catalyst kernel (rate 1 simple random walk by default).
    pub kernel: Kernel,
    pub kappa: f64,
    pub p: usize,
    pub gamma: f64,
    pub rho: f64,
    /// Maximum joint state count; default 2^14·L^d.
    pub cap: u128,
    /// Restrict the catalyst to configurations with exactly k particles
    /// (canonical measure) instead of the full Bernoulli(ρ) state space.
    #[serde(default)]
    pub sector: Option<usize>,
}

impl OperatorSpec {
    pub fn new(torus: Torus, kappa: f64, p: usize, rho: f64) -> Result<Self> {
        let spec = Self {
            kernel: srw_kernel(torus.d, 1.0)?,
            cap: (1u128 << 14) * torus.sites() as u128,
            torus,
            kappa,
            p,
            gamma: 1.0,
            rho,
            sector: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// Canonical sector with k particles.
    pub fn with_sector(mut self, k: usize) -> Result<Self> {
        if k > self.torus.sites() {
            return invalid("sector particle count exceeds the site count");
        }
        self.sector = Some(k);
        Ok(self)
    }

    /// True when the mask lies in the configured sector (always without one).
    pub fn in_sector(&self, mask: u64) -> bool {
        self.sector.is_none_or(|k| mask.count_ones() as usize == k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return invalid("κ must be finite and ≥ 0");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return invalid("ρ must lie in (0,1)");
        }
        if !self.gamma.is_finite() {
            return invalid("γ must be finite");
        }
        if self.kernel.d != self.torus.d {
            return invalid("kernel and torus dimensions differ");
        }
        if self.torus.sites() > 62 {
            return Err(Error::CapExceeded {
                states: u128::MAX,
                cap: self.cap,
            });
        }
        Ok(())
    }

    /// Walker tuples in the block reachable from (0,…,0).
    pub fn walker_states(&self) -> u128 {
        if self.kappa > 0.0 {
            (self.torus.sites() as u128).pow(self.p as u32)
        } else {
            1
        }
    }

    pub fn state_count(&self) -> u128 {
        (1u128 << self.torus.sites()) * self.walker_states()
    }
}

/// Matrix realization with its basis: state = mask + 2^N·(walker tuple index),
/// walker tuple index = Σ_q x_q·S^q.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub spec: OperatorSpec,
    pub matrix: Csr,
    /// Potential part (diagonal).
    pub potential: Vec<f64>,
}

impl SparseOperator {
    pub fn dim(&self) -> usize {
        self.matrix.n
    }

    fn n_sites(&self) -> usize {
        self.spec.torus.sites()
    }

    /// (configuration mask, walker sites) of a basis state.
    pub fn state(&self, i: usize) -> (u64, Vec<usize>) {
        let n = self.n_sites();
        let mask = (i & ((1usize << n) - 1)) as u64;
        let mut w = i >> n;
        let walkers = if self.spec.kappa > 0.0 {
            (0..self.spec.p)
                .map(|_| {
                    let x = w % n;
                    w /= n;
                    x
                })
                .collect()
        } else {
            vec![0; self.spec.p]
        };
        (mask, walkers)
    }

    /// Basis index of (mask, walkers); None outside the reachable block.
    pub fn index(&self, mask: u64, walkers: &[usize]) -> Option<usize> {
        let n = self.n_sites();
        if self.spec.kappa > 0.0 {
            let w = walkers.iter().rev().fold(0usize, |acc, x| acc * n + x);
            Some(mask as usize + (w << n))
        } else if walkers.iter().all(|x| *x == 0) {
            Some(mask as usize)
        } else {
            None
        }
    }

    /// Catalyst weight of each basis state: ν_ρ(η), or the uniform canonical
    /// weight 1/C(N,k) inside a sector and 0 outside.
    pub fn nu_weights(&self) -> Vec<f64> {
        let rho = self.spec.rho;
        let n = self.n_sites();
        let canonical = self.spec.sector.map(|k| 1.0 / binomial(n, k));
        (0..self.dim())
            .map(|i| {
                let mask = self.state(i).0;
                let k = mask.count_ones() as i32;
                match canonical {
                    Some(w) => {
                        if self.spec.in_sector(mask) {
                            w
                        } else {
                            0.0
                        }
                    }
                    None => rho.powi(k) * (1.0 - rho).powi(n as i32 - k),
                }
            })
            .collect()
    }

    /// Start vector ν_ρ ⊗ δ_{(0,…,0)}.
    pub fn start_vector(&self) -> Vec<f64> {
        let nu = self.nu_weights();
        let zero = vec![0; self.spec.p];
        let mut pi = vec![0.0; self.dim()];
        let n = self.n_sites();
        for mask in 0..(1u64 << n) {
            let i = self.index(mask, &zero).expect("origin tuple reachable");
            pi[i] = nu[i];
        }
        pi
    }

    /// max |(DG)_{ij} − (DG)_{ji}| with D = diag ν_ρ.
    pub fn weighted_asymmetry(&self) -> f64 {
        let nu = self.nu_weights();
        let mut worst: f64 = 0.0;
        for (i, j, v) in self.matrix.triplets() {
            let vt = self.matrix.get(j, i);
            worst = worst.max((nu[i] * v - nu[j] * vt).abs());
        }
        worst
    }

    /// Triplet text of the matrix.
    pub fn to_triplet_text(&self) -> String {
        self.matrix.to_triplet_text()
    }
}

/// Exclusion generator on {0,1}^{sites}: rate·p(a,b) swaps across every
/// unoriented bond whose endpoints differ.
pub fn build_se_generator(torus: &Torus, kernel: &Kernel) -> Result<Csr> {
    let n = torus.sites();
    check_cap(1u128 << n.min(127), (1u128 << 14) * n as u128)?;
    let bonds = torus_bonds(torus, kernel)?;
    let dim = 1usize << n;
    let mut trip = Vec::with_capacity(dim * (bonds.len() + 1));
    for mask in 0..dim {
        for b in &bonds {
            if (mask >> b.a & 1) != (mask >> b.b & 1) {
                let m2 = mask ^ (1 << b.a) ^ (1 << b.b);
                trip.push((mask, m2, b.rate));
                trip.push((mask, mask, -b.rate));
            }
        }
    }
    Ok(Csr::from_triplets(dim, trip))
}

/// The same generator from the oriented-jump form
/// Lf(η) = Σ_{x≠y} η(x)(1−η(y))·rate·p_T(x,y)[f(η^{x,y}) − f(η)].
pub fn build_se_generator_oriented(torus: &Torus, kernel: &Kernel) -> Result<Csr> {
    let n = torus.sites();
    check_cap(1u128 << n.min(127), (1u128 << 14) * n as u128)?;
    let dim = 1usize << n;
    let mut trip = Vec::new();
    for mask in 0..dim {
        for x in 0..n {
            if mask >> x & 1 == 0 {
                continue;
            }
            for (z, w) in &kernel.offsets {
                let y = torus.shift(x, z);
                if y == x || mask >> y & 1 == 1 {
                    continue;
                }
                let r = kernel.rate * w;
                trip.push((mask, mask ^ (1 << x) ^ (1 << y), r));
                trip.push((mask, mask, -r));
            }
        }
    }
    Ok(Csr::from_triplets(dim, trip))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check_cap(states: u128, cap: u128) -> Result<()> {
    if states > cap {
        Err(Error::CapExceeded { states, cap })
    } else {
        Ok(())
    }
}

/// G^κ_V = L + κΣ_qΔ_q + γΣ_q η(x_q) on the block reachable from (0,…,0).
/// With a sector, states outside it keep the full indexing but get empty rows.
pub fn build_joint_generator(spec: &OperatorSpec) -> Result<SparseOperator> {
    spec.validate()?;
    check_cap(spec.state_count(), spec.cap)?;
    let torus = spec.torus;
    let n = torus.sites();
    let dim = spec.state_count() as usize;
    let bonds = torus_bonds(&torus, &spec.kernel)?;
    let unit = srw_kernel(torus.d, 1.0)?;
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|x| {
            unit.offsets
                .iter()
                .map(|(z, _)| torus.shift(x, z))
                .collect()
        })
        .collect();
    let mut op = SparseOperator {
        spec: spec.clone(),
        matrix: Csr::from_triplets(0, vec![]),
        potential: vec![0.0; dim],
    };
    let mut trip = Vec::with_capacity(dim * (bonds.len() + 2 * torus.d * spec.p + 1));
    for i in 0..dim {
        let (mask, walkers) = op.state(i);
        if !spec.in_sector(mask) {
            continue;
        }
        for b in &bonds {
            if (mask >> b.a & 1) != (mask >> b.b & 1) {
                let j = i ^ (1 << b.a) ^ (1 << b.b);
                trip.push((i, j, b.rate));
                trip.push((i, i, -b.rate));
            }
        }
        if spec.kappa > 0.0 {
            let mut w = walkers.clone();
            for q in 0..spec.p {
                for &y in &neighbours[walkers[q]] {
                    if y == walkers[q] {
                        continue;
                    }
                    w[q] = y;
                    let j = op.index(mask, &w).expect("κ > 0 block is complete");
                    trip.push((i, j, spec.kappa));
                    trip.push((i, i, -spec.kappa));
                }
                w[q] = walkers[q];
            }
        }
        let v = spec.gamma * walkers.iter().filter(|x| mask >> **x & 1 == 1).count() as f64;
        op.potential[i] = v;
        if v != 0.0 {
            trip.push((i, i, v));
        }
    }
    op.matrix = Csr::from_triplets(dim, trip);
    Ok(op)
}

/// Moment evaluator for one operator; caches the dense eigendecomposition.
#[derive(Debug, Clone)]
pub struct ExactSystem {
    pub op: SparseOperator,
    pub start: Vec<f64>,
    eig: Option<(Vec<f64>, DMatrix<f64>)>,
}

impl ExactSystem {
    pub fn new(spec: &OperatorSpec) -> Result<Self> {
        let op = build_joint_generator(spec)?;
        let start = op.start_vector();
        let eig = (op.dim() <= DENSE_LIMIT).then(|| sym_eigen(&op.matrix.to_dense()));
        Ok(Self { op, start, eig })
    }

    /// log⟨π, e^{tG}1⟩.
    pub fn log_moment(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return invalid("t must be ≥ 0");
        }
        let ones = vec![1.0; self.op.dim()];
        match &self.eig {
            Some((vals, vecs)) => log_bilinear_exp(vals, vecs, &self.start, &ones, t)
                .ok_or_else(|| Error::NoConvergence("moment lost positivity".into())),
            None => {
                let m = &self.op.matrix;
                let f = |x: &[f64], y: &mut [f64]| m.matvec(x, y);
                let r = expv_sym(&f, &ones, t, 1e-12, 40)?;
                let ip: f64 = self.start.iter().zip(&r.w).map(|(a, b)| a * b).sum();
                Ok(r.log_scale + ip.ln())
            }
        }
    }

    /// d/dt log⟨π, e^{tG}1⟩.
    pub fn log_moment_slope(&self, t: f64) -> Result<f64> {
        match &self.eig {
            Some((vals, vecs)) => {
                let u = vecs.transpose() * DVector::from_column_slice(&self.start);
                let w = vecs.transpose() * DVector::from_element(self.op.dim(), 1.0);
                let top = vals[0];
                let mut num = 0.0;
                let mut den = 0.0;
                for (k, v) in vals.iter().enumerate() {
                    let c = u[k] * w[k] * ((v - top) * t).exp();
                    num += c * v;
                    den += c;
                }
                Ok(num / den)
            }
            None => {
                let h = 1e-3 * t.max(1.0);
                Ok(
                    (self.log_moment(t + h)? - self.log_moment((t - h).max(0.0))?)
                        / (t + h - (t - h).max(0.0)),
                )
            }
        }
    }

    /// Λ_p(t) = (1/pt)·log moment; None at t = 0.
    pub fn lambda(&self, t: f64) -> Result<Option<f64>> {
        if t == 0.0 {
            return Ok(None);
        }
        Ok(Some(self.log_moment(t)? / (self.op.spec.p as f64 * t)))
    }

    /// Top eigenvalue μ_p of the reachable block.
    pub fn top_eigenvalue(&self) -> f64 {
        match &self.eig {
            Some((vals, _)) => vals[0],
            None => {
                let m = &self.op.matrix;
                let f = |x: &[f64], y: &mut [f64]| m.matvec(x, y);
                lanczos_top(&f, &vec![1.0; self.op.dim()], 1e-10, 60, 200).value
            }
        }
    }
}

/// E_{ν_ρ,0}(exp ∫₀ᵗ V) = ⟨π, e^{tG^κ_V}1⟩.
pub fn exact_moment(spec: &OperatorSpec, t: f64) -> Result<f64> {
    Ok(ExactSystem::new(spec)?.log_moment(t)?.exp())
}

/// Λ_p(t) for each t of the grid (None at t = 0).
pub fn exact_lambda_profile(spec: &OperatorSpec, t_grid: &[f64]) -> Result<Vec<Option<f64>>> {
    let sys = ExactSystem::new(spec)?;
    t_grid.iter().map(|t| sys.lambda(*t)).collect()
}

/// E_η exp[∫₀ᵗ Σ_z K(z,s)ξ_s(z) ds] for every η, with K piecewise constant in
/// time: pieces are (duration, potential per site) in forward time order.
pub fn se_exp_functional_all(
    torus: &Torus,
    kernel: &Kernel,
    pieces: &[(f64, Vec<f64>)],
) -> Result<Vec<f64>> {
    let gen = build_se_generator(torus, kernel)?;
    let dim = gen.n;
    let n = torus.sites();
    let mut v = DVector::from_element(dim, 1.0);
    for (tau, k) in pieces.iter().rev() {
        if k.len() != n {
            return invalid("potential length does not match torus");
        }
        let diag: Vec<f64> = (0..dim)
            .map(|m| (0..n).filter(|x| m >> x & 1 == 1).map(|x| k[x]).sum())
            .collect();
        let a = gen.add_diagonal(&diag).to_dense() * *tau;
        v = expm(&a) * v;
    }
    Ok(v.iter().copied().collect())
}

/// ν_ρ-average of `se_exp_functional_all`.
pub fn se_exp_functional(
    torus: &Torus,
    kernel: &Kernel,
    rho: f64,
    pieces: &[(f64, Vec<f64>)],
) -> Result<f64> {
    let all = se_exp_functional_all(torus, kernel, pieces)?;
    let n = torus.sites() as i32;
    Ok(all
        .iter()
        .enumerate()
        .map(|(m, v)| {
            let k = (m as u64).count_ones() as i32;
            rho.powi(k) * (1.0 - rho).powi(n - k) * v
        })
        .sum())
}

/// E_η of a configuration under `se_exp_functional_all`.
pub fn se_value_at(all: &[f64], eta: &Configuration) -> f64 {
    all[eta.mask() as usize]
}

/// Outcome of the exponential-martingale check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    /// ⟨π, E·[N_t]⟩ for the ν_ρ ⊗ δ_0 start.
    pub mean: f64,
    /// max_state |e^{t𝒜^new}1 − 1|.
    pub tilted_deviation: f64,
    /// max_state |E[N_t] − 1| from the Feynman–Kac representation.
    pub direct_deviation: f64,
    pub deviation: f64,
}

/// Checks that N_t^r = exp[g(Y_t) − g(Y_0) − ∫₀ᵗ (e^{−g}𝒜e^{g})(Y_s) ds] has
/// mean 1 for 𝒜 = (1/κ)L + Δ and g = (r/κ)ψ, p = 1.
///
/// The tilted generator 𝒜^new_{ij} = e^{−g_i}𝒜_{ij}e^{g_j} (i ≠ j) with zero
/// row sums is exponentiated by Padé; independently E_i[N_t] =
/// e^{−g_i}(e^{t(𝒜 − diag h)}e^{g})_i with h = e^{−g}𝒜e^{g} by symmetric eigen.
pub fn martingale_check(
    spec: &OperatorSpec,
    psi: &[f64],
    r: f64,
    t: f64,
) -> Result<MartingaleReport> {
    if spec.p != 1 || !(spec.kappa > 0.0) {
        return invalid("martingale check needs p = 1 and κ > 0");
    }
    let gen_spec = OperatorSpec {
        gamma: 0.0,
        ..spec.clone()
    };
    let op = build_joint_generator(&gen_spec)?;
    let dim = op.dim();
    if psi.len() != dim {
        return invalid("ψ must have one value per joint state");
    }
    if psi.iter().any(|x| !x.is_finite()) {
        return invalid("ψ must be finite");
    }
    // 𝒜 = (1/κ)(L + κΔ) = (1/κ)L + Δ
    let a = op.matrix.to_dense() / spec.kappa;
    let g: Vec<f64> = psi.iter().map(|x| r / spec.kappa * x).collect();
    let mut tilted = DMatrix::zeros(dim, dim);
    let mut h = vec![0.0; dim];
    for i in 0..dim {
        let mut off = 0.0;
        for j in 0..dim {
            let aij = a[(i, j)];
            h[i] += aij * (g[j] - g[i]).exp();
            if i != j && aij != 0.0 {
                let v = aij * (g[j] - g[i]).exp();
                tilted[(i, j)] = v;
                off += v;
            }
        }
        tilted[(i, i)] = -off;
    }
    let e = expm(&(tilted * t));
    let tilted_dev = (0..dim)
        .map(|i| (e.row(i).sum() - 1.0).abs())
        .fold(0.0, f64::max);

    let mut b = a.clone();
    for i in 0..dim {
        b[(i, i)] -= h[i];
    }
    let (vals, vecs) = sym_eigen(&b);
    let eg = DVector::from_iterator(dim, g.iter().map(|x| x.exp()));
    let coeff = vecs.transpose() * eg;
    let scaled =
        DVector::from_iterator(dim, coeff.iter().zip(&vals).map(|(c, v)| c * (v * t).exp()));
    let prop = &vecs * scaled;
    let n_mean: Vec<f64> = (0..dim).map(|i| (-g[i]).exp() * prop[i]).collect();
    let direct_dev = n_mean.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    let pi = op.start_vector();
    let mean = pi.iter().zip(&n_mean).map(|(a, b)| a * b).sum();
    Ok(MartingaleReport {
        mean,
        tilted_deviation: tilted_dev,
        direct_deviation: direct_dev,
        deviation: tilted_dev.max(direct_dev),
    })
}

/// ψ(η, x) on every joint state (p = 1) from a per-configuration evaluator.
pub fn joint_field(
    op: &SparseOperator,
    mut f: impl FnMut(&Configuration, usize) -> f64,
) -> Vec<f64> {
    let torus = op.spec.torus;
    (0..op.dim())
        .map(|i| {
            let (mask, w) = op.state(i);
            f(&Configuration::from_mask(torus, mask), w[0])
        })
        .collect()
}
