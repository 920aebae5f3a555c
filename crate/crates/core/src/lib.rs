//! Convexly constrained LiGME (cLiGME) models.
//!
//! Regularized least squares `1/2 ||y - A x||^2 + mu Psi_B(L x)` under hard
//! convex constraints `c_i x in C_i`, where `Psi_B` is a generalized Moreau
//! enhancement of a convex penalty `Psi`. The enhancement is nonconvex, but
//! with `B` designed by [`gme::design_b_theta`] the whole objective stays
//! convex and [`solver::solve`] converges to a global minimizer.
//!
//! - [`linop`]: linear operators with adjoints, stacks, direct sums, norms.
//! - [`prox`]: penalties with closed-form proxes and projectable sets.
//! - [`gme`]: enhanced penalties, `B` design and the convexity certificate.
//! - [`solver`]: the fixed-point operator, step sizes and the iteration.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gme;
pub mod linop;
pub mod prox;
pub mod solver;

pub use error::{Error, Result};
pub use linop::{LinearMap, Operator, Vector};
pub use prox::{ConvexSet, Penalty, ProductConstraint};
pub use solver::{CLigmeProblem, SolveReport, SolverParams, SolverState};
