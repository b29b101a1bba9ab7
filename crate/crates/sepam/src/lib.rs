//! Parabolic Anderson model ∂u/∂t = κΔu + ξu driven by a symmetric exclusion
//! catalyst: event-driven simulation, exact small-system spectra, Feynman–Kac
//! Monte Carlo and the lattice numerics (heat kernels, Green functions, Cauchy
//! problems) needed to check the model's Lyapunov-exponent bounds.
//!
//! Rate conventions: the discrete Laplacian is Δf(x) = Σ_{|y-x|=1} (f(y) - f(x))
//! (total jump rate 2d); catalyst particles move with the rate-1 kernel; the
//! reactant walk X^κ has generator κΔ.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exact;
pub mod exclusion;
pub mod fields;
pub mod harness;
pub mod irw;
pub mod lattice;
pub mod montecarlo;
pub mod numerics;
pub mod rng;
pub mod variational;

pub use error::{Error, Result};

/// 1[κ] = 1 + 1/(2dκ); infinite at κ = 0.
pub fn one_kappa(d: usize, kappa: f64) -> f64 {
    1.0 + 1.0 / (2.0 * d as f64 * kappa)
}
