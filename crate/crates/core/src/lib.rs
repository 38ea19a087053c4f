//! Viscous two-fluid flow with a pressure-equilibrium closure, in Lagrangian
//! mass coordinates on `[0, 1]` with no-slip walls.
//!
//! The crate is organised bottom-up:
//!
//! - [`closure`] solves the algebraic pressure-equilibrium relation per cell,
//! - [`equilibrium`] computes the zero-velocity steady state,
//! - [`solver`] advances the staggered scheme,
//! - [`diagnostics`] evaluates energies, Lyapunov functionals and decay fits,
//! - [`harness`] wires scenarios, configuration files and experiment outputs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closure;
pub mod diagnostics;
pub mod equilibrium;
pub mod error;
pub mod harness;
mod interp;
pub mod quadrature;
pub mod solver;
pub mod tridiag;

pub use error::{Error, Result};
