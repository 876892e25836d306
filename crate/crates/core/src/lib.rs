//! Numerical verification of the Itô-type formula for the one-dimensional
//! stochastic heat equation `∂t u = κ ∂xx u + Ẇ` on `[0, 1]` with Dirichlet
//! boundary conditions and zero initial data.

pub mod config;
pub mod error;
pub mod fit;
pub mod golden;
pub mod hida;
pub mod paths;
pub mod quadrature;
pub mod regularization;
pub mod report;
pub mod rng;
pub mod runner;
pub mod semigroup;
pub mod spectral;
pub mod stransform;
pub mod window;

pub use error::{Error, Result};
