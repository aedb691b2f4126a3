//! Pseudo-spectral simulation and verification harness for the stochastic
//! Boussinesq system on the 3-torus with transport noise.
//!
//! The crate is organized around a plain spectral core (grids, fields,
//! multiplier operators), a noise layer (Wiener increments, transport
//! coefficient families, multiplicative maps, assumption checkers), the
//! drift/diffusion assembly of the evolution equation, an exponential
//! Euler–Maruyama integrator, the constructive Picard solvers, stopping-time
//! bookkeeping, and Monte Carlo ensembles over independent paths.

pub mod checkpoint;
pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod field;
mod fft;
pub mod grid;
pub mod integrator;
pub mod noise;
pub mod ops;
pub mod picard;
pub mod stopping;

pub use error::{Error, Result};
pub use field::{SpectralField, StateU, VectorField};
pub use grid::Grid;
