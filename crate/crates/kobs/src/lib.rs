//! Numerical laboratory for the obstacle problem of the Kolmogorov operator
//! `L = Δ_v − ∂_t − v·∇_x` on kinetic cylinders.
//!
//! The crate solves `min{−L u + φ, u} = 0` on the unit kinetic cylinder by two
//! independent routes (a penalized march and a projected-relaxation
//! complementarity solver), then measures everything a free-boundary analysis
//! cares about: contact-set thickness, scale-indexed energies, blow-up
//! rescalings and their template fits, transport-derivative decay, growth and
//! nondegeneracy margins, free-boundary graphs with their Hölder seminorms,
//! and a Longstaff–Schwartz Monte Carlo cross-check of the underlying optimal
//! stopping problem.

pub mod blowup;
pub mod config;
pub mod error;
pub mod estimators;
pub mod free_boundary;
pub mod geometry;
pub mod grid;
mod linalg;
pub mod quad;
pub mod reference;
pub mod report;
pub mod solver;
pub mod stopping;
pub mod weiss;

pub use error::{Error, Result};
