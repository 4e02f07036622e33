//! Null-control toolkit for the one-dimensional Cahn-Hilliard–Burgers system
//! linearized around a constant-concentration steady state.
//!
//! The pipeline runs bottom-up:
//!
//! * [`mesh`]: uniform grid, banded finite-difference operators, discrete norms.
//! * [`steady`]: the steady Burgers profile `ū` and the coupling constants.
//! * [`dynamics`]: θ-scheme propagator for the coupled `(w, ψ)` system, linear
//!   and semi-implicit nonlinear forward solves.
//! * [`adjoint`]: exact discrete transpose of the forward propagator.
//! * [`hum`]: penalized HUM control synthesis, observability and cost probes.
//! * [`source_term`]: decaying weights `ρ₀`, `ρ_F`, the geometric schedule and
//!   the piecewise control for sources in the weighted space.
//! * [`nonlinear`]: the nonlinear terms and the fixed-point controller.
//! * [`carleman`]: the auxiliary function `ν`, Carleman weights and the
//!   joint-estimate probe.
//! * [`harness`]: configuration, CSV output and experiment orchestration.

// `!(x > 0.0)` is used on purpose so NaN fails validation; index loops mirror the stencils.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod carleman;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod hum;
pub mod linalg;
pub mod mesh;
pub mod nonlinear;
pub mod source_term;
pub mod steady;

pub use error::{Error, Result};
