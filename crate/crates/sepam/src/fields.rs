//! Deterministic lattice fields: the smoothed occupation field ψ, its kernel
//! χ, the K_diag/K_off kernels, and Feynman–Kac Cauchy problems on tori,
//! boxes and half-space boxes.

use crate::error::{invalid, Error, Result};
use crate::exclusion::Configuration;
use crate::lattice::{self, green_at, halfspace_green, srw_kernel, Kernel, Torus};
use crate::numerics::bessel::q_seq;
use crate::numerics::gauss::CompositeRule;
use crate::numerics::krylov::expv_phi_sym;
use crate::numerics::Csr;
use crate::one_kappa;
use crate::rng::par_trials;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

/// Values attached to lattice sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub sites: Vec<Vec<i64>>,
    pub values: Vec<f64>,
}

impl Field {
    /// `site<TAB>value` table with comma-separated coordinates.
    pub fn to_table(&self) -> String {
        let mut s = String::from("site\tvalue\n");
        for (z, v) in self.sites.iter().zip(&self.values) {
            let zs: Vec<String> = z.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{}\t{v:.17e}", zs.join(","));
        }
        s
    }
}

/// Lexicographic ℓ^∞ window of radius r in ℤ^d (first coordinate fastest).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub d: usize,
    pub radius: usize,
}

impl Window {
    pub fn width(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        self.width().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coords(&self, mut i: usize) -> Vec<i64> {
        let w = self.width();
        (0..self.d)
            .map(|_| {
                let c = (i % w) as i64 - self.radius as i64;
                i /= w;
                c
            })
            .collect()
    }

    pub fn index(&self, z: &[i64]) -> Option<usize> {
        let w = self.width() as i64;
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
}

/// Where ψ lives: ℤ^d with a truncation window, or a torus with its own kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PsiGeometry {
    Lattice { radius: usize },
    Torus(Torus),
}

/// Parameters of ψ(η,x) = ∫₀ᵀ ds Σ_z p_{2ds·1[κ]}(z,x)[η(z) − ρ].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub kernel: Kernel,
    pub kappa: f64,
    pub t_horizon: f64,
    pub rho: f64,
    pub geometry: PsiGeometry,
}

/// Tail mass above which a ψ window is flagged as insufficient.
pub const WINDOW_TAIL_TOL: f64 = 1e-9;

impl PsiSpec {
    pub fn new(
        d: usize,
        kappa: f64,
        t_horizon: f64,
        rho: f64,
        geometry: PsiGeometry,
    ) -> Result<Self> {
        if !(kappa > 0.0) {
            return invalid("κ must be positive");
        }
        if !(t_horizon >= 0.0) {
            return invalid("T must be ≥ 0");
        }
        if !(rho > 0.0 && rho < 1.0) {
            return invalid("ρ must lie in (0,1)");
        }
        if let PsiGeometry::Torus(t) = geometry {
            if t.d != d {
                return invalid("torus dimension mismatch");
            }
        }
        Ok(Self {
            kernel: srw_kernel(d, 1.0)?,
            kappa,
            t_horizon,
            rho,
            geometry,
        })
    }

    pub fn d(&self) -> usize {
        self.kernel.d
    }

    pub fn one_kappa(&self) -> f64 {
        one_kappa(self.d(), self.kappa)
    }

    /// ceil(6·√(2dT·1[κ])) + 1.
    pub fn default_radius(d: usize, t_horizon: f64, kappa: f64) -> usize {
        (6.0 * (2.0 * d as f64 * t_horizon * one_kappa(d, kappa)).sqrt()).ceil() as usize + 1
    }

    /// Time rule on [0, T] shared by every heat-kernel time integral here.
    pub fn rule(&self) -> CompositeRule {
        time_rule(self.t_horizon)
    }
}

/// Composite Gauss–Legendre rule on [0, T]: panels of width ≤ 1/2, 16 nodes each.
pub fn time_rule(t: f64) -> CompositeRule {
    let panels = ((2.0 * t).ceil() as usize).max(4);
    CompositeRule::uniform(0.0, t, panels, 16)
}

/// χ(z) = ∫₀ᵀ p_{2du·1[κ]}(0,z) du on a window, with the discarded tail mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiProfile {
    pub window: Window,
    pub values: Vec<f64>,
    pub tail_mass: f64,
    pub nodes: usize,
}

impl ChiProfile {
    pub fn get(&self, z: &[i64]) -> f64 {
        self.window.index(z).map(|i| self.values[i]).unwrap_or(0.0)
    }
}

/// χ on the ℓ^∞ window of the given radius.
pub fn chi_profile(d: usize, kappa: f64, t_horizon: f64, radius: usize) -> ChiProfile {
    let window = Window { d, radius };
    let rule = time_rule(t_horizon);
    let ok = one_kappa(d, kappa);
    let mut values = vec![0.0; window.len()];
    let w = window.width();
    for (u, wt) in rule.nodes.iter().zip(&rule.weights) {
        // p_{2du·1[κ]}(0,z) = ∏_i q_{z_i}(2u·1[κ])
        let q = q_seq(radius, 2.0 * u * ok);
        let mut prod = vec![1.0; window.len()];
        let mut stride = 1;
        for _ in 0..d {
            for (i, p) in prod.iter_mut().enumerate() {
                let c = (i / stride) % w;
                *p *= q[(c as i64 - radius as i64).unsigned_abs() as usize];
            }
            stride *= w;
        }
        for (v, p) in values.iter_mut().zip(&prod) {
            *v += wt * p;
        }
    }
    let tail_mass = (t_horizon - values.iter().sum::<f64>()).max(0.0);
    ChiProfile {
        window,
        values,
        tail_mass,
        nodes: rule.len(),
    }
}

/// χ on a torus by the finite Fourier sum, ∫₀ᵀ e^{-cuϕ̂} du in closed form.
pub fn chi_torus(torus: &Torus, kappa: f64, t_horizon: f64) -> Vec<f64> {
    let d = torus.d;
    let c = 2.0 * d as f64 * one_kappa(d, kappa);
    let kernel = srw_kernel(d, 1.0).expect("d ≥ 1");
    let n = torus.sites();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let k: Vec<f64> = torus
            .coords(j)
            .iter()
            .map(|x| 2.0 * PI * *x as f64 / torus.l as f64)
            .collect();
        let phi = kernel.symbol(&k);
        let integral = if phi * c * t_horizon < 1e-14 {
            t_horizon
        } else {
            -(-c * t_horizon * phi).exp_m1() / (c * phi)
        };
        for (zi, o) in out.iter_mut().enumerate() {
            let z = torus.wrap_displacement(&torus.coords(zi));
            let kz: f64 = z.iter().zip(&k).map(|(a, b)| *a as f64 * b).sum();
            *o += integral * kz.cos();
        }
    }
    out.iter().map(|v| v / n as f64).collect()
}

/// ψ at requested sites together with window diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiValues {
    pub sites: Vec<Vec<i64>>,
    pub values: Vec<f64>,
    pub tail_mass: f64,
    pub window_ok: bool,
}

/// Precomputed ψ evaluator for one spec.
#[derive(Debug, Clone)]
pub struct PsiEvaluator {
    pub spec: PsiSpec,
    chi: Vec<f64>,
    window: Option<Window>,
    pub tail_mass: f64,
}

impl PsiEvaluator {
    pub fn new(spec: &PsiSpec) -> Self {
        match spec.geometry {
            PsiGeometry::Lattice { radius } => {
                let prof = chi_profile(spec.d(), spec.kappa, spec.t_horizon, radius);
                Self {
                    spec: spec.clone(),
                    chi: prof.values,
                    window: Some(prof.window),
                    tail_mass: prof.tail_mass,
                }
            }
            PsiGeometry::Torus(t) => Self {
                spec: spec.clone(),
                chi: chi_torus(&t, spec.kappa, spec.t_horizon),
                window: None,
                tail_mass: 0.0,
            },
        }
    }

    /// χ(z) for a displacement z.
    pub fn chi(&self, z: &[i64]) -> f64 {
        match (&self.window, self.spec.geometry) {
            (Some(w), _) => w.index(z).map(|i| self.chi[i]).unwrap_or(0.0),
            (None, PsiGeometry::Torus(t)) => self.chi[t.index(z)],
            _ => unreachable!(),
        }
    }

    pub fn window_ok(&self, eta: &Configuration) -> bool {
        match self.window {
            Some(w) => eta.torus.l > w.width() && self.tail_mass <= WINDOW_TAIL_TOL,
            None => true,
        }
    }

    /// ψ(η, x); η is read periodically on its torus.
    pub fn psi(&self, eta: &Configuration, x: &[i64]) -> f64 {
        let torus = eta.torus;
        let rho = self.spec.rho;
        match self.window {
            Some(w) => {
                let mut s = 0.0;
                let mut z = vec![0i64; w.d];
                for i in 0..w.len() {
                    let c = self.chi[i];
                    if c == 0.0 {
                        continue;
                    }
                    let mut r = i;
                    for (k, zk) in z.iter_mut().enumerate() {
                        *zk = (r % w.width()) as i64 - w.radius as i64 + x[k];
                        r /= w.width();
                    }
                    s += c * eta.get(torus.index(&z)) as f64;
                }
                s - rho * self.spec.t_horizon
            }
            None => {
                let xi = torus.index(x);
                (0..torus.sites())
                    .map(|zi| {
                        let disp: Vec<i64> = torus
                            .coords(zi)
                            .iter()
                            .zip(torus.coords(xi))
                            .map(|(a, b)| a - b)
                            .collect();
                        self.chi[torus.index(&disp)] * (eta.get(zi) as f64 - rho)
                    })
                    .sum()
            }
        }
    }

    /// ψ(η^{a,b}, x) − ψ(η, x) from the two changed sites (exact for linear ψ).
    pub fn swap_delta(&self, eta: &Configuration, a: &[i64], b: &[i64], x: &[i64]) -> f64 {
        let t = eta.torus;
        let ea = eta.get(t.index(a)) as f64;
        let eb = eta.get(t.index(b)) as f64;
        if ea == eb {
            return 0.0;
        }
        let za: Vec<i64> = a.iter().zip(x).map(|(p, q)| p - q).collect();
        let zb: Vec<i64> = b.iter().zip(x).map(|(p, q)| p - q).collect();
        let (za, zb) = match self.window {
            Some(_) => (t.wrap_displacement(&za), t.wrap_displacement(&zb)),
            None => (za, zb),
        };
        (self.chi(&zb) - self.chi(&za)) * (ea - eb)
    }
}

/// ψ(η, x) for each x in `xs`.
pub fn psi_field(eta: &Configuration, spec: &PsiSpec, xs: &[Vec<i64>]) -> Result<PsiValues> {
    if eta.torus.d != spec.d() {
        return invalid("configuration dimension mismatch");
    }
    let ev = PsiEvaluator::new(spec);
    Ok(PsiValues {
        sites: xs.to_vec(),
        values: xs.iter().map(|x| ev.psi(eta, x)).collect(),
        tail_mass: ev.tail_mass,
        window_ok: ev.window_ok(eta),
    })
}

/// Outcome of the three ψ difference bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiBoundsReport {
    pub samples: usize,
    /// max |ψ(η,b) − ψ(η,a)| and its bound 2T.
    pub max_site_difference: f64,
    pub bound_site_difference: f64,
    /// max |ψ(η^{a,b},x) − ψ(η,x)| and its bound 2G_d.
    pub max_swap_difference: f64,
    pub bound_swap_difference: f64,
    /// max_x Σ_{bonds} (ψ(η^{a,b},x) − ψ(η,x))² and its bound G_d/(2d).
    pub max_swap_energy: f64,
    pub bound_swap_energy: f64,
    /// min and max of ψ against −ρT and (1−ρ)T.
    pub min_psi: f64,
    pub max_psi: f64,
    pub tolerance: f64,
    pub window_ok: bool,
    pub pass: bool,
}

/// Checks |ψ(η,b)−ψ(η,a)| ≤ 2T, |ψ(η^{ab},x)−ψ(η,x)| ≤ 2G_d and
/// Σ_{bonds}(ψ(η^{ab},x)−ψ(η,x))² ≤ G_d/(2d), plus −ρT ≤ ψ ≤ (1−ρ)T.
///
/// `pairs` are site pairs for the first bound; the swap quantities use every
/// bond of the torus at each site in `sites`.
pub fn psi_bounds_check(
    spec: &PsiSpec,
    etas: &[Configuration],
    pairs: &[(Vec<i64>, Vec<i64>)],
    sites: &[Vec<i64>],
    tolerance: f64,
) -> Result<PsiBoundsReport> {
    let d = spec.d();
    let g = lattice::green_srw(d)?;
    let ev = PsiEvaluator::new(spec);
    let t = spec.t_horizon;
    let mut rep = PsiBoundsReport {
        samples: etas.len(),
        max_site_difference: 0.0,
        bound_site_difference: 2.0 * t,
        max_swap_difference: 0.0,
        bound_swap_difference: 2.0 * g,
        max_swap_energy: 0.0,
        bound_swap_energy: g / (2.0 * d as f64),
        min_psi: f64::INFINITY,
        max_psi: f64::NEG_INFINITY,
        tolerance,
        window_ok: true,
        pass: true,
    };
    for eta in etas {
        rep.window_ok &= ev.window_ok(eta);
        let torus = eta.torus;
        let mut cache: HashMap<Vec<i64>, f64> = HashMap::new();
        let mut psi_at = |x: &Vec<i64>| *cache.entry(x.clone()).or_insert_with(|| ev.psi(eta, x));
        for (a, b) in pairs {
            let diff = (psi_at(b) - psi_at(a)).abs();
            rep.max_site_difference = rep.max_site_difference.max(diff);
        }
        for x in sites {
            let v = psi_at(x);
            rep.min_psi = rep.min_psi.min(v);
            rep.max_psi = rep.max_psi.max(v);
            let mut energy = 0.0;
            for ai in 0..torus.sites() {
                let a = torus.coords(ai);
                for k in 0..d {
                    let mut b = a.clone();
                    b[k] += 1;
                    let delta = ev.swap_delta(eta, &a, &b, x);
                    rep.max_swap_difference = rep.max_swap_difference.max(delta.abs());
                    energy += delta * delta;
                }
            }
            rep.max_swap_energy = rep.max_swap_energy.max(energy);
        }
    }
    let rho = spec.rho;
    rep.pass = rep.max_site_difference <= rep.bound_site_difference + tolerance
        && rep.max_swap_difference <= rep.bound_swap_difference + tolerance
        && rep.max_swap_energy <= rep.bound_swap_energy + tolerance
        && rep.min_psi >= -rho * t - tolerance
        && rep.max_psi <= (1.0 - rho) * t + tolerance
        && rep.window_ok;
    Ok(rep)
}

/// χ, K_diag and gradients on a window.
#[derive(Debug, Clone)]
pub struct KKernels {
    pub d: usize,
    pub kappa: f64,
    pub t_horizon: f64,
    pub chi: ChiProfile,
    /// K_diag(z) = Σ_e (χ(z+e) − χ(z))² on the window of radius chi.radius − 1.
    pub k_diag: Field,
    pub window_ok: bool,
}

impl KKernels {
    /// χ(z+e) − χ(z) for unit vector index `e` in 0..2d.
    pub fn gradient(&self, z: &[i64], e: usize) -> f64 {
        let mut y = z.to_vec();
        y[e / 2] += if e.is_multiple_of(2) { 1 } else { -1 };
        self.chi.get(&y) - self.chi.get(z)
    }

    /// K_off(z1, z2) = Σ_e (χ(z1+e) − χ(z1))(χ(z2+e) − χ(z2)).
    pub fn k_off(&self, z1: &[i64], z2: &[i64]) -> f64 {
        (0..2 * self.d)
            .map(|e| self.gradient(z1, e) * self.gradient(z2, e))
            .sum()
    }

    pub fn k_diag_norm1(&self) -> f64 {
        self.k_diag.values.iter().sum()
    }

    /// Σ_{z1≠z2} |K_off(z1,z2)| over the ℓ^∞ window of radius r, and an upper
    /// bound for the contribution of pairs leaving it.
    pub fn k_off_norm1(&self, r: usize) -> (f64, f64) {
        let sub = Window {
            d: self.d,
            radius: r,
        };
        let n = sub.len();
        let ne = 2 * self.d;
        let mut grads = vec![0.0; n * ne];
        for i in 0..n {
            let z = sub.coords(i);
            for e in 0..ne {
                grads[i * ne + e] = self.gradient(&z, e);
            }
        }
        let mut s = 0.0;
        for i in 0..n {
            let gi = &grads[i * ne..(i + 1) * ne];
            for j in (i + 1)..n {
                let gj = &grads[j * ne..(j + 1) * ne];
                let k: f64 = gi.iter().zip(gj).map(|(a, b)| a * b).sum();
                s += 2.0 * k.abs();
            }
        }
        // pairs with a member outside: ≤ 2 Σ_e (Σ_{z∉sub}|D_e|)(Σ_z |D_e|)
        let full = self.chi.window;
        let mut tail = 0.0;
        for e in 0..ne {
            let mut inside = 0.0;
            let mut outside = 0.0;
            for i in 0..full.len() {
                let z = full.coords(i);
                let g = self.gradient(&z, e).abs();
                if sub.index(&z).is_some() {
                    inside += g;
                } else {
                    outside += g;
                }
            }
            tail += 2.0 * outside * (inside + outside);
        }
        (s, tail)
    }
}

/// χ and K_diag on a window of the given radius (χ is computed one site wider).
pub fn k_kernels(d: usize, kappa: f64, t_horizon: f64, radius: usize) -> KKernels {
    let chi = chi_profile(d, kappa, t_horizon, radius + 1);
    let inner = Window { d, radius };
    let mut sites = Vec::with_capacity(inner.len());
    let mut values = Vec::with_capacity(inner.len());
    let mut kk = KKernels {
        d,
        kappa,
        t_horizon,
        window_ok: chi.tail_mass <= WINDOW_TAIL_TOL,
        chi,
        k_diag: Field {
            sites: vec![],
            values: vec![],
        },
    };
    for i in 0..inner.len() {
        let z = inner.coords(i);
        let v: f64 = (0..2 * d).map(|e| kk.gradient(&z, e).powi(2)).sum();
        sites.push(z);
        values.push(v);
    }
    kk.k_diag = Field { sites, values };
    kk
}

/// p_s(0,0) of the rate-1 simple random walk in d dimensions.
fn p00(d: usize, s: f64) -> f64 {
    q_seq(0, s / d as f64)[0].powi(d as i32)
}

/// (4/1[κ])(∫₀ᵀ p_{4du·1[κ]}(0,0) du − ∫₀ᵀ p_{2d(u+T)·1[κ]}(0,0) du).
pub fn k_diag_closed_form(d: usize, kappa: f64, t_horizon: f64) -> f64 {
    let ok = one_kappa(d, kappa);
    let rule = time_rule(t_horizon);
    let df = d as f64;
    let a = rule.integrate(|u| p00(d, 4.0 * df * u * ok));
    let b = rule.integrate(|u| p00(d, 2.0 * df * (u + t_horizon) * ok));
    4.0 / ok * (a - b)
}

/// κ → ∞ limit (1/d)(∫₀^{2dT} p_u(0,0) du − ∫_{2dT}^{4dT} p_u(0,0) du).
pub fn k_diag_large_kappa_limit(d: usize, t_horizon: f64) -> f64 {
    let df = d as f64;
    let s = 2.0 * df * t_horizon;
    let r1 = time_rule(s);
    let a = r1.integrate(|u| p00(d, u));
    let b = r1.integrate(|u| p00(d, u + s));
    (a - b) / df
}

// ---------------------------------------------------------------------------
// Cauchy problems
// ---------------------------------------------------------------------------

/// Spatial domain of a Cauchy problem. Boxes suppress jumps that would leave
/// them; a half-space box is a box inside H⁺ = {z¹ > 0} whose wall is at z¹ = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Torus(Torus),
    Box { lo: Vec<i64>, hi: Vec<i64> },
    HalfSpace { lo: Vec<i64>, hi: Vec<i64> },
}

impl Domain {
    pub fn d(&self) -> usize {
        match self {
            Domain::Torus(t) => t.d,
            Domain::Box { lo, .. } | Domain::HalfSpace { lo, .. } => lo.len(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Domain::Torus(t) => t.sites(),
            Domain::Box { lo, hi } | Domain::HalfSpace { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| (b - a + 1) as usize)
                .product(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, mut i: usize) -> Vec<i64> {
        match self {
            Domain::Torus(t) => t.coords(i),
            Domain::Box { lo, hi } | Domain::HalfSpace { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| {
                    let w = (b - a + 1) as usize;
                    let c = a + (i % w) as i64;
                    i /= w;
                    c
                })
                .collect(),
        }
    }

    /// Index of `c`; tori wrap, boxes return None outside.
    pub fn index(&self, c: &[i64]) -> Option<usize> {
        match self {
            Domain::Torus(t) => Some(t.index(c)),
            Domain::Box { lo, hi } | Domain::HalfSpace { lo, hi } => {
                let mut i = 0usize;
                for k in (0..lo.len()).rev() {
                    if c[k] < lo[k] || c[k] > hi[k] {
                        return None;
                    }
                    i = i * (hi[k] - lo[k] + 1) as usize + (c[k] - lo[k]) as usize;
                }
                Some(i)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Domain::Torus(_) => Ok(()),
            Domain::Box { lo, hi } | Domain::HalfSpace { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return invalid("box corners are inconsistent");
                }
                if let Domain::HalfSpace { .. } = self {
                    if lo[0] != 1 {
                        return invalid("half-space box must start at the wall z¹ = 1");
                    }
                }
                Ok(())
            }
        }
    }
}

/// Walk graph of a kernel on a domain.
#[derive(Debug, Clone)]
pub struct SiteGraph {
    /// neighbours[i][k]: target of offset k from site i (None when suppressed).
    pub neighbours: Vec<Vec<Option<usize>>>,
    pub weights: Vec<f64>,
    pub rate: f64,
    /// Generator Q f(x) = rate Σ_k w_k (f(x + e_k) − f(x)), suppressed jumps dropped.
    pub generator: Csr,
}

impl SiteGraph {
    pub fn new(domain: &Domain, kernel: &Kernel) -> Result<Self> {
        domain.validate()?;
        if domain.d() != kernel.d {
            return invalid("kernel and domain dimensions differ");
        }
        let n = domain.len();
        let mut neighbours = Vec::with_capacity(n);
        let mut trip = Vec::new();
        for i in 0..n {
            let c = domain.coords(i);
            let mut row = Vec::with_capacity(kernel.offsets.len());
            for (z, w) in &kernel.offsets {
                let y: Vec<i64> = c.iter().zip(z).map(|(a, b)| a + b).collect();
                let j = domain.index(&y);
                if let Some(j) = j {
                    if j != i {
                        trip.push((i, j, kernel.rate * w));
                        trip.push((i, i, -kernel.rate * w));
                    }
                }
                row.push(j.filter(|j| *j != i));
            }
            neighbours.push(row);
        }
        Ok(Self {
            neighbours,
            weights: kernel.offsets.iter().map(|o| o.1).collect(),
            rate: kernel.rate,
            generator: Csr::from_triplets(n, trip),
        })
    }
}

/// Source coefficient c(x,t), piecewise constant in t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Source {
    Static(Vec<f64>),
    /// values[k] applies on [starts[k], starts[k+1]); starts[0] = 0.
    Piecewise {
        starts: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl Source {
    fn piece(&self, t: f64) -> usize {
        match self {
            Source::Static(_) => 0,
            Source::Piecewise { starts, .. } => {
                starts.partition_point(|s| *s <= t).saturating_sub(1)
            }
        }
    }

    fn values(&self, k: usize) -> &[f64] {
        match self {
            Source::Static(v) => v,
            Source::Piecewise { values, .. } => &values[k],
        }
    }

    /// c(·, t).
    pub fn at(&self, t: f64) -> &[f64] {
        self.values(self.piece(t))
    }

    fn breaks(&self) -> Vec<f64> {
        match self {
            Source::Static(_) => vec![],
            Source::Piecewise { starts, .. } => starts[1..].to_vec(),
        }
    }

    fn sign(&self) -> (bool, bool) {
        let all = |f: &dyn Fn(f64) -> bool| match self {
            Source::Static(v) => v.iter().all(|x| f(*x)),
            Source::Piecewise { values, .. } => values.iter().flatten().all(|x| f(*x)),
        };
        (all(&|x| x >= 0.0), all(&|x| x <= 0.0))
    }

    fn sup_abs(&self) -> f64 {
        match self {
            Source::Static(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Source::Piecewise { values, .. } => {
                values.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
            }
        }
    }
}

/// ∂v/∂t = Q v + c(x,t) v, v(·,0) = 1, on a domain with a kernel walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyProblem {
    pub domain: Domain,
    pub kernel: Kernel,
    pub source: Source,
    pub horizon: f64,
}

impl CauchyProblem {
    pub fn new(domain: Domain, kernel: Kernel, source: Source, horizon: f64) -> Result<Self> {
        domain.validate()?;
        let n = domain.len();
        match &source {
            Source::Static(v) if v.len() != n => {
                return invalid("source length does not match domain")
            }
            Source::Piecewise { starts, values } => {
                if starts.is_empty() || starts[0] != 0.0 || starts.len() != values.len() {
                    return invalid("piecewise source needs starts[0] = 0 and one field per start");
                }
                if starts.windows(2).any(|w| w[1] <= w[0]) {
                    return invalid("piecewise source starts must increase");
                }
                if values.iter().any(|v| v.len() != n) {
                    return invalid("source length does not match domain");
                }
            }
            _ => {}
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return invalid("horizon must be finite and ≥ 0");
        }
        Ok(Self {
            domain,
            kernel,
            source,
            horizon,
        })
    }

    /// Indicator source a·1_S for a set of coordinates.
    pub fn indicator(domain: &Domain, set: &[Vec<i64>], amplitude: f64) -> Result<Vec<f64>> {
        let mut c = vec![0.0; domain.len()];
        for z in set {
            let i = domain
                .index(z)
                .ok_or_else(|| Error::InvalidParameter("source site outside domain".into()))?;
            c[i] += amplitude;
        }
        Ok(c)
    }
}

/// Source c(x,s) = a·p_{τ}(X_{t−s}, x) for a piecewise-constant path X given as
/// (jump time, position) pairs in X-time on [0, t]; the first entry is at time 0.
pub fn moving_point_source(
    domain: &Domain,
    path: &[(f64, Vec<i64>)],
    t: f64,
    amplitude: f64,
    smoothing_time: f64,
) -> Result<Source> {
    if path.is_empty() || path[0].0 != 0.0 {
        return invalid("path must start at time 0");
    }
    let d = domain.d();
    let kernel = srw_kernel(d, 1.0)?;
    // X-time segments [u_k, u_{k+1}) map to s ∈ (t − u_{k+1}, t − u_k]
    let mut pieces: Vec<(f64, Vec<f64>)> = Vec::new();
    for (k, (u, x)) in path.iter().enumerate() {
        if *u >= t {
            break;
        }
        let u_next = path.get(k + 1).map(|p| p.0).unwrap_or(t).min(t);
        let s_start = (t - u_next).max(0.0);
        let mut field = vec![0.0; domain.len()];
        for (i, f) in field.iter_mut().enumerate() {
            let y = domain.coords(i);
            let z: Vec<i64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
            *f = amplitude * lattice::transition_prob(&kernel, smoothing_time, &z)?;
        }
        pieces.push((s_start, field));
    }
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    pieces.dedup_by(|b, a| b.0 == a.0);
    let (starts, values): (Vec<f64>, Vec<Vec<f64>>) = pieces.into_iter().unzip();
    Ok(Source::Piecewise { starts, values })
}

/// Integration mode of `solve_cauchy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CauchyMode {
    /// Krylov exponential integrator with adaptive steps.
    Stepping { tol: f64 },
    /// Uniformization (positive Taylor) series on each constant piece.
    Series { tol: f64 },
    /// Feynman–Kac Monte Carlo at the query sites.
    MonteCarlo { n: usize, seed: u64 },
}

/// Solution at query times; full vectors only for deterministic modes.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchySolution {
    pub times: Vec<f64>,
    pub sites: Vec<usize>,
    /// v(site, time) as [time][query site].
    pub v: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// v(·, time) on the whole domain.
    pub full_v: Option<Vec<Vec<f64>>>,
    /// ∫₀^time v(·, s) ds on the whole domain.
    pub full_integral: Option<Vec<Vec<f64>>>,
    /// ∫₀^time Σ_x c(x,s) v(x,s) ds.
    pub source_work: Option<Vec<f64>>,
}

impl CauchySolution {
    /// Σ_x w(x, t) − ∫₀ᵗ Σ_x c(x,s)(w(x,s) + 1) ds per query time (zero in exact arithmetic).
    pub fn mass_residuals(&self) -> Option<Vec<f64>> {
        let fv = self.full_v.as_ref()?;
        let work = self.source_work.as_ref()?;
        Some(
            fv.iter()
                .zip(work)
                .map(|(v, wk)| v.iter().map(|x| x - 1.0).sum::<f64>() - wk)
                .collect(),
        )
    }
}

/// Solves the Cauchy problem at sorted query times.
pub fn solve_cauchy(
    problem: &CauchyProblem,
    query_sites: &[usize],
    query_times: &[f64],
    mode: &CauchyMode,
) -> Result<CauchySolution> {
    if query_times.windows(2).any(|w| w[1] < w[0]) {
        return invalid("query times must be sorted");
    }
    if query_times.iter().any(|t| *t < 0.0 || *t > problem.horizon) {
        return invalid("query time outside [0, horizon]");
    }
    let n = problem.domain.len();
    if query_sites.iter().any(|s| *s >= n) {
        return invalid("query site outside domain");
    }
    let graph = SiteGraph::new(&problem.domain, &problem.kernel)?;
    match mode {
        CauchyMode::MonteCarlo { n: trials, seed } => {
            solve_mc(problem, &graph, query_sites, query_times, *trials, *seed)
        }
        _ => solve_deterministic(problem, &graph, query_sites, query_times, mode),
    }
}

fn solve_deterministic(
    problem: &CauchyProblem,
    graph: &SiteGraph,
    query_sites: &[usize],
    query_times: &[f64],
    mode: &CauchyMode,
) -> Result<CauchySolution> {
    let n = problem.domain.len();
    let mut v = vec![1.0; n];
    let mut integral = vec![0.0; n];
    let mut work = 0.0;
    let mut t = 0.0;
    let mut full_v = Vec::new();
    let mut full_int = Vec::new();
    let mut works = Vec::new();
    let mut breaks = problem.source.breaks();
    breaks.retain(|b| *b < problem.horizon);
    for &tq in query_times {
        loop {
            let next_break = breaks
                .iter()
                .copied()
                .find(|b| *b > t)
                .unwrap_or(f64::INFINITY);
            let stop = next_break.min(tq);
            if stop > t {
                let c = problem.source.at(t).to_vec();
                let (vn, part) = match mode {
                    CauchyMode::Series { tol } => {
                        series_propagate(&graph.generator, &c, &v, stop - t, *tol)?
                    }
                    CauchyMode::Stepping { tol } => {
                        let a = graph.generator.add_diagonal(&c);
                        let op = |x: &[f64], y: &mut [f64]| a.matvec(x, y);
                        expv_phi_sym(&op, &v, stop - t, *tol, 30).map_err(|e| match e {
                            Error::NoConvergence(m) => {
                                Error::NoConvergence(format!("step control: {m}"))
                            }
                            other => other,
                        })?
                    }
                    CauchyMode::MonteCarlo { .. } => unreachable!(),
                };
                work += c.iter().zip(&part).map(|(a, b)| a * b).sum::<f64>();
                for (a, b) in integral.iter_mut().zip(&part) {
                    *a += b;
                }
                v = vn;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Divergent("Cauchy solution overflowed".into()));
                }
                t = stop;
            }
            if t >= tq {
                break;
            }
        }
        full_v.push(v.clone());
        full_int.push(integral.clone());
        works.push(work);
    }
    Ok(CauchySolution {
        times: query_times.to_vec(),
        sites: query_sites.to_vec(),
        v: full_v
            .iter()
            .map(|fv| query_sites.iter().map(|s| fv[*s]).collect())
            .collect(),
        stderr: vec![vec![0.0; query_sites.len()]; query_times.len()],
        full_v: Some(full_v),
        full_integral: Some(full_int),
        source_work: Some(works),
    })
}

/// e^{τ(Q+diag c)}v and ∫₀^τ e^{s(Q+diag c)}v ds by uniformization:
/// with Λ making P = I + (Q + diag c)/Λ entrywise non-negative,
/// e^{τA}v = Σ_n Pois(n; Λτ) Pⁿv and ∫₀^τ e^{sA}v ds = Σ_n P(Pois(Λτ) > n)/Λ · Pⁿv.
fn series_propagate(
    q: &Csr,
    c: &[f64],
    v: &[f64],
    tau: f64,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = v.len();
    let diag = q.diag();
    let lam = diag
        .iter()
        .zip(c)
        .map(|(d, ci)| -(d + ci))
        .fold(1e-3, f64::max);
    let growth = 1.0 + c.iter().fold(0.0f64, |m, x| m.max(*x)) / lam;
    let sub = ((lam * tau) / 8.0).ceil().max(1.0) as usize;
    let h = tau / sub as f64;
    let a = q.add_diagonal(c);
    let mut cur = v.to_vec();
    let mut integral = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for _ in 0..sub {
        let m = lam * h;
        let mut pois = (-m).exp();
        let mut cdf = pois;
        let mut term = cur.clone();
        let mut out: Vec<f64> = term.iter().map(|x| pois * x).collect();
        let mut int: Vec<f64> = term.iter().map(|x| (1.0 - cdf) / lam * x).collect();
        let mut k = 0usize;
        let mut gk = 1.0;
        loop {
            k += 1;
            a.matvec(&term, &mut tmp);
            for (t, x) in term.iter_mut().zip(&tmp) {
                *t += x / lam;
            }
            pois *= m / k as f64;
            cdf += pois;
            gk *= growth;
            for i in 0..n {
                out[i] += pois * term[i];
                int[i] += (1.0 - cdf).max(0.0) / lam * term[i];
            }
            // P(N > k) ≤ pois·(m/(k+1))/(1 − m/(k+2)), free of the cancellation in 1 − cdf
            let kf = k as f64;
            let tail = if kf + 2.0 > m {
                pois * (m / (kf + 1.0)) / (1.0 - m / (kf + 2.0))
            } else {
                f64::INFINITY
            };
            let remaining = tail * gk * growth;
            if kf > m && remaining * (1.0 + h) < tol * 1e-3 {
                break;
            }
            if k > 10_000 {
                return Err(Error::NoConvergence("series did not converge".into()));
            }
        }
        for (a, b) in integral.iter_mut().zip(&int) {
            *a += b;
        }
        cur = out;
    }
    Ok((cur, integral))
}

fn solve_mc(
    problem: &CauchyProblem,
    graph: &SiteGraph,
    query_sites: &[usize],
    query_times: &[f64],
    trials: usize,
    seed: u64,
) -> Result<CauchySolution> {
    if trials < 2 {
        return invalid("Monte Carlo mode needs at least two trials");
    }
    let t_max = query_times.last().copied().unwrap_or(0.0);
    let nq = query_times.len();
    let mut v = vec![vec![0.0; query_sites.len()]; nq];
    let mut se = vec![vec![0.0; query_sites.len()]; nq];
    let exp = Exp::new(graph.rate).map_err(|_| Error::InvalidParameter("rate".into()))?;
    let cum: Vec<f64> = graph
        .weights
        .iter()
        .scan(0.0, |s, w| {
            *s += w;
            Some(*s)
        })
        .collect();
    for (qi, &site) in query_sites.iter().enumerate() {
        let samples = par_trials(trials, seed ^ ((qi as u64) << 32), |_, rng| {
            // path: (time, site) jump skeleton on [0, t_max]
            let mut path = vec![(0.0, site)];
            let mut t = 0.0;
            let mut x = site;
            loop {
                t += exp.sample(rng);
                if t > t_max {
                    break;
                }
                let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
                let k = cum.partition_point(|c| *c <= u).min(cum.len() - 1);
                if let Some(y) = graph.neighbours[x][k] {
                    x = y;
                    path.push((t, x));
                }
            }
            query_times
                .iter()
                .map(|&tq| path_exponent(&problem.source, &path, tq).exp())
                .collect::<Vec<f64>>()
        });
        for ti in 0..nq {
            let vals: Vec<f64> = samples.iter().map(|s| s[ti]).collect();
            let (m, e) = mean_stderr(&vals);
            v[ti][qi] = m;
            se[ti][qi] = e;
        }
    }
    Ok(CauchySolution {
        times: query_times.to_vec(),
        sites: query_sites.to_vec(),
        v,
        stderr: se,
        full_v: None,
        full_integral: None,
        source_work: None,
    })
}

/// ∫₀ᵗ c(Y_s, t − s) ds along a jump skeleton.
fn path_exponent(source: &Source, path: &[(f64, usize)], t: f64) -> f64 {
    let mut cuts: Vec<f64> = path.iter().map(|p| p.0).filter(|s| *s < t).collect();
    for b in source.breaks() {
        let s = t - b;
        if s > 0.0 && s < t {
            cuts.push(s);
        }
    }
    cuts.push(t);
    cuts.sort_by(|a, b| a.total_cmp(b));
    let mut acc = 0.0;
    let mut k = 0usize;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        while k + 1 < path.len() && path[k + 1].0 <= a {
            k += 1;
        }
        let mid = 0.5 * (a + b);
        acc += source.at(t - mid)[path[k].1] * (b - a);
    }
    acc
}

pub(crate) fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// ‖𝒢|c|‖_∞ with the contraction certificate when it is below 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub norm: f64,
    pub argmax: Vec<i64>,
    /// sup w ≤ θ/(1−θ) when θ < 1.
    pub certificate: Option<f64>,
}

/// sup_x Σ_y G(x,y)|c(y)| for a static source, with G the ℤ^d Green function
/// (boxes) or the half-space Green function (half-space boxes).
pub fn green_contraction(problem: &CauchyProblem) -> Result<Contraction> {
    let c = match &problem.source {
        Source::Static(c) => c,
        _ => return invalid("green_contraction needs a time-independent source"),
    };
    let halfspace = match &problem.domain {
        Domain::Torus(_) => {
            return Err(Error::Unsupported(
                "no finite Green function on a torus".into(),
            ))
        }
        Domain::Box { .. } => false,
        Domain::HalfSpace { .. } => true,
    };
    let support: Vec<(Vec<i64>, f64)> = c
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (problem.domain.coords(i), v.abs()))
        .collect();
    if support.is_empty() {
        return Ok(Contraction {
            norm: 0.0,
            argmax: vec![0; problem.domain.d()],
            certificate: Some(0.0),
        });
    }
    let d = problem.domain.d();
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for (z, _) in &support {
        for k in 0..d {
            lo[k] = lo[k].min(z[k] - 1);
            hi[k] = hi[k].max(z[k] + 1);
        }
    }
    if halfspace {
        lo[0] = lo[0].max(1);
    }
    let cand = Domain::Box { lo, hi };
    let mut cache: HashMap<Vec<i64>, f64> = HashMap::new();
    let mut g = |z: Vec<i64>| -> Result<f64> {
        let mut key: Vec<i64> = z.iter().map(|x| x.abs()).collect();
        key.sort_unstable();
        if let Some(v) = cache.get(&key) {
            return Ok(*v);
        }
        let v = green_at(&problem.kernel, &key, 0.0)?;
        cache.insert(key, v);
        Ok(v)
    };
    let mut best = (f64::NEG_INFINITY, vec![]);
    for i in 0..cand.len() {
        let x = cand.coords(i);
        let mut s = 0.0;
        for (y, cv) in &support {
            let z: Vec<i64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let mut gv = g(z)?;
            if halfspace {
                let ys = lattice::reflect(y);
                let zs: Vec<i64> = ys.iter().zip(&x).map(|(a, b)| a - b).collect();
                gv += g(zs)?;
            }
            s += gv * cv;
        }
        if s > best.0 {
            best = (s, x);
        }
    }
    let theta = best.0;
    Ok(Contraction {
        norm: theta,
        argmax: best.1,
        certificate: (theta < 1.0).then(|| theta / (1.0 - theta)),
    })
}

/// Convenience: half-space Green function between two sites of H⁺.
pub fn halfspace_green_at(kernel: &Kernel, x: &[i64], y: &[i64]) -> Result<f64> {
    halfspace_green(kernel, x, y)
}

/// True when every source value has one sign.
pub fn source_sign_uniform(source: &Source) -> bool {
    let (p, n) = source.sign();
    p || n
}

/// sup |c|.
pub fn source_sup(source: &Source) -> f64 {
    source.sup_abs()
}
