//! Numerical toolkit for slow–fast stochastic evolution equations driven by
//! fractional Brownian motion (`H > 1/2`) in the slow component and a
//! Q-Wiener process in the fast component.
//!
//! States live in a finite spectral truncation of a Hilbert space on which the
//! generator is diagonal; see [`spectral`]. Pathwise stochastic integrals are
//! generalized Riemann–Stieltjes integrals built from fractional Weyl
//! derivatives ([`rough`]).

pub mod averaging;
pub mod bounds;
pub mod coefficients;
pub mod deviation;
pub mod error;
pub mod grid;
pub mod noise;
pub mod quadrature;
pub mod rng;
pub mod rough;
pub mod solver;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
