//! Hierarchical boundary control of the 1-D wave equation on a moving domain.
//!
//! The physical problem lives on a time-dependent interval `0 < x < alpha(t)`
//! whose right endpoint follows a prescribed expansion profile. The change of
//! variables `y = x / alpha(t)` maps it onto the fixed cylinder
//! `(0,1) x (0,T)`, at the price of a variable-coefficient operator with
//! mixed space-time derivatives. Everything in this crate works on the
//! cylinder side of that transform.
//!
//! Two nested control problems are solved on top of one discrete wave stepper:
//!
//! * the *follower* picks a boundary control on one lateral edge that
//!   minimizes a tracking functional plus a quadratic penalty, for a fixed
//!   *leader* control on the same edge;
//! * the *leader* picks the minimal-norm control steering the coupled
//!   leader/follower optimality system into an `eps`-ball around a target
//!   terminal state, computed through a Fenchel dual problem whose evaluation
//!   only needs the forward map and its exact transpose.
//!
//! The numerical backbone is a "discretize then transpose" rule: every
//! adjoint quantity that enters an optimality condition or a duality pairing
//! is the exact algebraic transpose of the discrete forward recurrence, so
//! the discrete duality identities hold to rounding. An independently
//! discretized backward-in-time solver for the formal adjoint operator is
//! kept alongside for simulation and cross-checks; the two routes agree to
//! truncation order but are never interchanged inside a pairing.

// Stencil kernels index neighbors explicitly; iterator rewrites of
// `j-1, j, j+1` patterns read worse than the loops they replace.
#![allow(clippy::needless_range_loop)]

pub mod discretization;
pub mod error;
pub mod follower;
pub mod geometry;
pub mod leader;
pub mod oracle;
pub mod par;
pub mod wave_solver;

pub use error::{Error, Result};
