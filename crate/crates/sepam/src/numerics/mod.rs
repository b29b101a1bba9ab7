//! Numerical building blocks shared by the model modules.

pub mod bessel;
pub mod dense;
pub mod gauss;
pub mod krylov;
pub mod sparse;

pub use sparse::Csr;
