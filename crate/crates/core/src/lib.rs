//! Self-similar profiles with algebraic tails for the constant-kernel
//! coagulation equation with nonlocal drift
//!
//! ```text
//! ∂t f + ∂x((x u(t) - 1) f) = ∫_0^x f(x - y) f(y) dy - 2 f ∫_0^∞ f dy,   u = M0(f) / M1(f)
//! ```
//!
//! Profiles `f(t, x) = t^{-2} F(x / t)` are computed by a monotone fixed-point
//! iteration on the logarithmic derivative of `F` and cross-checked against
//! the exponential family and a direct finite-volume simulation.

// NaN must fail every domain check, so guards are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evolution;
pub mod grid;
pub mod model;
pub mod profile;
pub mod tau;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction, TauFunction};
pub use model::{DerivedConstants, ModelParams};
pub use profile::{outer_solve, OuterOptions, ProfileSolution, SolveReport};
