//! Numerical engineering of robust adiabatic control pulses for two-level
//! systems.
//!
//! The crate evaluates fidelity, adiabaticity and perturbation metrics of a
//! parameterized effective-field trajectory through a block upper-triangular
//! (Van Loan) propagator, differentiates them analytically with respect to the
//! control parameters, and maximizes an ensemble-weighted combination with a
//! limited-memory quasi-Newton ascent. A simulator verifies the resulting
//! pulses: Rabi and offset sweeps, dephasing pulse trains, coupled multi-spin
//! dynamics and Larmor-selectivity profiles.
//!
//! Ensemble members, sweep points and offset nodes are evaluated through
//! [`exec::Execution`], which uses rayon when the `parallel` feature is on and
//! falls back to plain iteration otherwise.

pub mod ansatz;
pub mod error;
pub mod exec;
pub mod io;
pub mod metrics;
pub mod ode;
pub mod optimizer;
pub mod recipes;
pub mod simulator;
pub mod spinalg;
pub mod units;
pub mod vanloan;

pub use error::{Error, Result};
pub use exec::Execution;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
