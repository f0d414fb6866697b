//! Simulation of fast-slow rough differential equations driven by a mixed
//! fractional-Brownian / Brownian rough path, and numerical checks of the
//! averaging principle for such systems.
//!
//! The numerics are generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`). The `f64` aliases at the crate root are what the
//! experiments use.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod averaging;
pub mod coefficients;
pub mod error;
pub mod fields;
pub mod gaussian_paths;
pub mod grid;
pub mod rde_solver;
pub mod rng;
pub mod rough_integrate;
pub mod rough_lift;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use grid::Grid;
pub use scalar::Real;

pub type GridF64 = grid::Grid<f64>;
pub type GridF32 = grid::Grid<f32>;
pub type PathF64 = gaussian_paths::GaussianPath<f64>;
pub type PathF32 = gaussian_paths::GaussianPath<f32>;
pub type LiftF64 = rough_lift::RoughLift<f64>;
pub type LiftF32 = rough_lift::RoughLift<f32>;
