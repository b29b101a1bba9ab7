//! Rayleigh–Ritz quantities on the truncated joint space, the test-function
//! lower bound, the quadratic occupation-time bound with its Varadhan
//! maximization, and Dirichlet eigenvalues of −κΔ on boxes.

use crate::error::{invalid, Error, Result};
use crate::exact::{build_joint_generator, OperatorSpec, SparseOperator};
use crate::exclusion::torus_bonds;
use crate::lattice::{srw_kernel, Torus};
use crate::numerics::krylov::lanczos_top;
use serde::{Deserialize, Serialize};

/// A₁ − A₂ − κA₃ for a function normalized in L²(ν_ρ ⊗ counting measure).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighParts {
    /// Potential form Σ ν V f².
    pub a1: f64,
    /// Exclusion Dirichlet form ½ Σ ν Σ_bonds rate (f(η^{ab}) − f(η))².
    pub a2: f64,
    /// Walker Dirichlet form ½ Σ ν Σ_q Σ_{|e|=1} (f(x_q + e) − f(x_q))².
    pub a3: f64,
    pub value: f64,
}

/// L²(ν_ρ ⊗ m^p) norm squared of a function on the basis of `op`.
pub fn weighted_norm2(op: &SparseOperator, f: &[f64]) -> f64 {
    op.nu_weights().iter().zip(f).map(|(w, x)| w * x * x).sum()
}

/// Rescales f to unit L²(ν_ρ ⊗ m^p) norm.
pub fn normalize(op: &SparseOperator, f: &mut [f64]) {
    let n = weighted_norm2(op, f).sqrt();
    for x in f.iter_mut() {
        *x /= n;
    }
}

/// Rayleigh quotient (G^κ_V f, f) split into its three forms.
pub fn rayleigh_quotient(f: &[f64], op: &SparseOperator) -> Result<RayleighParts> {
    if f.len() != op.dim() {
        return invalid("test function length does not match the operator");
    }
    let norm2 = weighted_norm2(op, f);
    if (norm2 - 1.0).abs() > 1e-8 {
        return invalid(format!("test function not normalized (‖f‖² = {norm2})"));
    }
    let spec = &op.spec;
    let nu = op.nu_weights();
    let torus = spec.torus;
    let bonds = torus_bonds(&torus, &spec.kernel)?;
    let unit = srw_kernel(torus.d, 1.0)?;
    let (mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0);
    for i in 0..op.dim() {
        let (mask, walkers) = op.state(i);
        if nu[i] == 0.0 {
            continue;
        }
        a1 += nu[i] * op.potential[i] * f[i] * f[i];
        for b in &bonds {
            if (mask >> b.a & 1) != (mask >> b.b & 1) {
                let j = i ^ (1 << b.a) ^ (1 << b.b);
                a2 += 0.5 * nu[i] * b.rate * (f[j] - f[i]).powi(2);
            }
        }
        if spec.kappa > 0.0 {
            let mut w = walkers.clone();
            for q in 0..spec.p {
                for (z, _) in &unit.offsets {
                    w[q] = torus.shift(walkers[q], z);
                    let j = op.index(mask, &w).expect("complete block");
                    a3 += 0.5 * nu[i] * (f[j] - f[i]).powi(2);
                }
                w[q] = walkers[q];
            }
        }
    }
    Ok(RayleighParts {
        a1,
        a2,
        a3,
        value: a1 - a2 - spec.kappa * a3,
    })
}

/// Top of the spectrum of G^κ_V on the reachable block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopEigenResult {
    pub mu: f64,
    /// λ_p = μ_p / p.
    pub lambda: f64,
    /// Eigenvector normalized in L²(ν_ρ ⊗ m^p).
    pub vector: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
    pub restarts: usize,
}

/// Restarted Lanczos on D^{1/2} G D^{−1/2} with D = diag ν_ρ. The exclusion
/// part conserves particle number and ν_ρ is constant on each sector, so D
/// commutes with G and the symmetrized operator is G itself.
pub fn top_eigenvalue(spec: &OperatorSpec, tol: f64) -> Result<TopEigenResult> {
    let op = build_joint_generator(spec)?;
    top_eigenvalue_of(&op, tol)
}

pub fn top_eigenvalue_of(op: &SparseOperator, tol: f64) -> Result<TopEigenResult> {
    if op.spec.p == 0 {
        return invalid("p must be ≥ 1");
    }
    let m = &op.matrix;
    let f = |x: &[f64], y: &mut [f64]| m.matvec(x, y);
    let start: Vec<f64> = (0..op.dim())
        .map(|i| 1.0 + 1e-3 * ((i * 7919) % 101) as f64 / 101.0)
        .collect();
    let top = lanczos_top(&f, &start, tol, 80.min(op.dim()), 500);
    if !top.converged {
        return Err(Error::NoConvergence(format!(
            "Lanczos residual {} above {tol} after {} restarts",
            top.residual, top.restarts
        )));
    }
    let mut vector = top.vector;
    if vector.iter().sum::<f64>() < 0.0 {
        for x in vector.iter_mut() {
            *x = -*x;
        }
    }
    normalize(op, &mut vector);
    Ok(TopEigenResult {
        mu: top.value,
        lambda: top.value / op.spec.p as f64,
        vector,
        residual: top.residual,
        converged: true,
        restarts: top.restarts,
    })
}

/// Test-function lower bound on λ₁ from f_ε(η,x) = (1+εη(x))φ(x)/√N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionBound {
    pub epsilon: f64,
    pub rho: f64,
    pub kappa: f64,
    /// N = 1 + (2ε+ε²)ρ.
    pub normalizer: f64,
    pub term_i: f64,
    pub term_ii: f64,
    pub term_iii: f64,
    /// (I − II − κ·III)/N.
    pub bound: f64,
    /// Gaussian width of φ (0 when φ was supplied).
    pub width: f64,
    /// Σ over ordered nearest-neighbour pairs of (φ(x) − φ(y))².
    pub energy: f64,
    pub phi: Vec<f64>,
}

/// Evaluates the three forms of f_ε exactly for a given profile φ on the torus
/// of walker positions (φ is normalized here).
pub fn test_function_bound_with_phi(
    epsilon: f64,
    rho: f64,
    kappa: f64,
    torus: &Torus,
    phi: &[f64],
) -> Result<TestFunctionBound> {
    if !(epsilon >= 0.0) || !(rho > 0.0 && rho < 1.0) || !(kappa >= 0.0) {
        return invalid("need ε ≥ 0, ρ ∈ (0,1), κ ≥ 0");
    }
    if phi.len() != torus.sites() {
        return invalid("φ length does not match torus");
    }
    let s: f64 = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if s == 0.0 {
        return invalid("φ must not vanish");
    }
    let phi: Vec<f64> = phi.iter().map(|x| x / s).collect();
    let unit = srw_kernel(torus.d, 1.0)?;
    let n = 1.0 + (2.0 * epsilon + epsilon * epsilon) * rho;
    let term_i = (1.0 + epsilon).powi(2) * rho;
    // II = ε²ρ(1−ρ) Σ_{x≠y} p(x,y)φ(x)²
    let mut pmass = 0.0;
    let mut energy = 0.0;
    let mut cross = 0.0;
    for x in 0..torus.sites() {
        for (z, w) in &unit.offsets {
            let y = torus.shift(x, z);
            if y != x {
                pmass += w * phi[x] * phi[x];
            }
            energy += (phi[x] - phi[y]).powi(2);
            cross += 0.5
                * (n * (phi[x].powi(2) + phi[y].powi(2))
                    - 2.0 * (1.0 + epsilon * rho).powi(2) * phi[x] * phi[y]);
        }
    }
    let term_ii = epsilon * epsilon * rho * (1.0 - rho) * pmass;
    let term_iii = cross;
    Ok(TestFunctionBound {
        epsilon,
        rho,
        kappa,
        normalizer: n,
        term_i,
        term_ii,
        term_iii,
        bound: (term_i - term_ii - kappa * term_iii) / n,
        width: 0.0,
        energy,
        phi,
    })
}

/// Normalized discrete Gaussian of width w centred at the origin (wrapped distance).
pub fn gaussian_profile(torus: &Torus, width: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..torus.sites())
        .map(|i| {
            let r2: f64 = torus
                .wrap_displacement(&torus.coords(i))
                .iter()
                .map(|c| (*c as f64).powi(2))
                .sum();
            (-r2 / (2.0 * width * width)).exp()
        })
        .collect();
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / s).collect()
}

fn profile_energy(torus: &Torus, phi: &[f64]) -> f64 {
    let unit = srw_kernel(torus.d, 1.0).expect("d ≥ 1");
    (0..torus.sites())
        .map(|x| {
            unit.offsets
                .iter()
                .map(|(z, _)| (phi[x] - phi[torus.shift(x, z)]).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Test-function bound with φ the narrowest Gaussian whose energy is ≤ ε²
/// (width found by bisection on [1/4, L]).
pub fn test_function_bound(
    epsilon: f64,
    rho: f64,
    kappa: f64,
    torus: &Torus,
) -> Result<TestFunctionBound> {
    if !(epsilon > 0.0) {
        return invalid("ε must be positive");
    }
    let budget = epsilon * epsilon;
    let e = |w: f64| profile_energy(torus, &gaussian_profile(torus, w));
    let mut hi = torus.l as f64;
    if e(hi) > budget {
        return invalid("box too small for the requested ε");
    }
    let mut lo = 0.25;
    if e(lo) <= budget {
        hi = lo;
    }
    for _ in 0..200 {
        if hi - lo < 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if e(mid) <= budget {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let phi = gaussian_profile(torus, hi);
    let mut r = test_function_bound_with_phi(epsilon, rho, kappa, torus, &phi)?;
    r.width = hi;
    Ok(r)
}

/// f_ε on the basis of a p = 1 operator (normalized in L²(ν_ρ ⊗ m)).
pub fn test_function_vector(op: &SparseOperator, epsilon: f64, phi: &[f64]) -> Result<Vec<f64>> {
    if op.spec.p != 1 {
        return invalid("test function is defined for p = 1");
    }
    let n = 1.0 + (2.0 * epsilon + epsilon * epsilon) * op.spec.rho;
    Ok((0..op.dim())
        .map(|i| {
            let (mask, w) = op.state(i);
            let x = w[0];
            (1.0 + epsilon * (mask >> x & 1) as f64) * phi[x] / n.sqrt()
        })
        .collect())
}

/// Quadratic lower bound (√α − √ρ)²/(2G) on the occupation-time rate function.
pub fn psi_rate_bound(alpha: f64, rho: f64, g: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) || !(rho > 0.0 && rho < 1.0) || !(g > 0.0) {
        return invalid("need α ∈ [0,1], ρ ∈ (0,1), G > 0");
    }
    Ok((alpha.sqrt() - rho.sqrt()).powi(2) / (2.0 * g))
}

/// Maximum of γβ − (√β − √ρ)²/(2G) and its maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaradhanMax {
    pub value: f64,
    pub beta: f64,
}

fn varadhan_objective(beta: f64, gamma: f64, rho: f64, g: f64) -> f64 {
    gamma * beta - (beta.sqrt() - rho.sqrt()).powi(2) / (2.0 * g)
}

/// Unconstrained maximum over β ≥ 0: ργ/(1−2Gγ) at β = ρ/(1−2Gγ)².
pub fn varadhan_closed_form(gamma: f64, rho: f64, g: f64) -> Result<VaradhanMax> {
    if !(rho > 0.0 && rho < 1.0) || !(g > 0.0) || !gamma.is_finite() {
        return invalid("need ρ ∈ (0,1), G > 0, finite γ");
    }
    let c = 1.0 - 2.0 * g * gamma;
    if c <= 0.0 {
        return Err(Error::Divergent(format!("2Gγ = {} ≥ 1", 2.0 * g * gamma)));
    }
    Ok(VaradhanMax {
        value: rho * gamma / c,
        beta: rho / (c * c),
    })
}

/// Maximum over β ∈ [0,1] (occupation densities), in closed form.
pub fn varadhan_constrained(gamma: f64, rho: f64, g: f64) -> Result<VaradhanMax> {
    if !(rho > 0.0 && rho < 1.0) || !(g > 0.0) || !gamma.is_finite() {
        return invalid("need ρ ∈ (0,1), G > 0, finite γ");
    }
    let c = 1.0 - 2.0 * g * gamma;
    let beta = if c > 0.0 {
        (rho / (c * c)).min(1.0)
    } else {
        // objective convex in √β: an endpoint wins
        if varadhan_objective(1.0, gamma, rho, g) >= varadhan_objective(0.0, gamma, rho, g) {
            1.0
        } else {
            0.0
        }
    };
    Ok(VaradhanMax {
        value: varadhan_objective(beta, gamma, rho, g),
        beta,
    })
}

/// Surrogate λ_p(0) = max_{α∈[0,1]} [pα − Ψ̲(α)]/p with Ψ̲ the quadratic bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lambda0Surrogate {
    pub label: String,
    pub rho: f64,
    pub g: f64,
    /// values[k] is the surrogate for p = k + 1.
    pub values: Vec<f64>,
    pub maximizers: Vec<f64>,
    pub gaps: Vec<f64>,
    pub strictly_increasing: bool,
}

pub fn lambda0_via_varadhan(p_max: usize, rho: f64, g: f64) -> Result<Lambda0Surrogate> {
    if p_max == 0 {
        return invalid("p_max must be ≥ 1");
    }
    let mut values = Vec::with_capacity(p_max);
    let mut maximizers = Vec::with_capacity(p_max);
    for p in 1..=p_max {
        let m = varadhan_constrained(p as f64, rho, g)?;
        values.push(m.value / p as f64);
        maximizers.push(m.beta);
    }
    let gaps: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(Lambda0Surrogate {
        label: "SURROGATE".into(),
        rho,
        g,
        strictly_increasing: gaps.iter().all(|x| *x > 0.0),
        values,
        maximizers,
        gaps,
    })
}

/// Smallest eigenvalue of −κΔ on a box with zero boundary values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletEigen {
    pub value: f64,
    pub iterations: usize,
    pub vector: Vec<f64>,
}

/// Inverse iteration with conjugate-gradient solves on the box [lo, hi].
pub fn dirichlet_eigenvalue(kappa: f64, lo: &[i64], hi: &[i64]) -> Result<DirichletEigen> {
    if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(hi).any(|(a, b)| a > b) {
        return invalid("empty or inconsistent box");
    }
    if !(kappa > 0.0) {
        return invalid("κ must be positive");
    }
    let d = lo.len();
    let widths: Vec<usize> = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (b - a + 1) as usize)
        .collect();
    let n: usize = widths.iter().product();
    let strides: Vec<usize> = (0..d).map(|k| widths[..k].iter().product()).collect();
    let apply = |x: &[f64], y: &mut [f64]| {
        for i in 0..n {
            let mut s = 2.0 * d as f64 * x[i];
            for k in 0..d {
                let c = i / strides[k] % widths[k];
                if c > 0 {
                    s -= x[i - strides[k]];
                }
                if c + 1 < widths[k] {
                    s -= x[i + strides[k]];
                }
            }
            y[i] = kappa * s;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut ax = vec![0.0; n];
    let mut prev = f64::INFINITY;
    for it in 1..=10_000 {
        let x = cg_solve(&apply, &v, 1e-14, 10 * n + 100);
        let nx = dot(&x, &x).sqrt();
        v = x.iter().map(|a| a / nx).collect();
        apply(&v, &mut ax);
        let lam = dot(&v, &ax);
        let res: f64 = ax
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lam * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if (lam - prev).abs() <= 1e-15 * lam.abs() || res <= 1e-12 * lam.abs() {
            return Ok(DirichletEigen {
                value: lam,
                iterations: it,
                vector: v,
            });
        }
        prev = lam;
    }
    Err(Error::NoConvergence(
        "inverse iteration did not converge".into(),
    ))
}

fn cg_solve(apply: &dyn Fn(&[f64], &mut [f64]), b: &[f64], tol: f64, max_it: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..max_it {
        if rr.sqrt() <= tol * bn {
            break;
        }
        apply(&p, &mut ap);
        let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    x
}
