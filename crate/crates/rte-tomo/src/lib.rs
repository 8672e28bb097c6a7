//! Optical tomography on the 2D radiative transfer equation.
//!
//! The crate provides, bottom to top:
//!
//! - [`grid`]: the phase-space discretization of the unit square times the
//!   unit circle, with boundary classification and quadrature rules;
//! - [`transport`]: forward and adjoint discrete-ordinates transport solves
//!   plus albedo measurements;
//! - [`experiments`]: synthetic inflow/outflow measurement datasets with
//!   seeded reproducibility and on-disk persistence;
//! - [`nonlinear`]: stochastic gradient descent (and the full-batch
//!   gradient-descent baseline) on the PDE-constrained data-mismatch
//!   objective, for scattering and absorption coefficients;
//! - [`linear`]: the linearized (Born-type) formulation around a background
//!   medium — detector adjoints, integral-kernel assembly, the quadratic
//!   objective, its exact minimizer and spectral convergence diagnostics;
//! - [`config`] / [`runner`]: reproducible run orchestration behind the
//!   `rte-tomo` command-line interface.

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiments;
pub mod field;
pub mod grid;
pub mod iofmt;
pub mod krylov;
pub mod linear;
pub mod nonlinear;
pub mod runner;
pub mod transport;

pub use error::{Error, Result};
pub use field::{BoundaryFlux, Medium, MediumKind, PhaseField};
pub use grid::{BoundaryClass, BoundaryPair, BoundarySide, PhaseGrid, QuadratureRule};
pub use transport::{
    collision, measure_outflow, solve_adjoint, solve_forward, Acceleration, SolveCounter,
    SolveOutput, SolverOptions,
};
