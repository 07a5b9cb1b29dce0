//! Numerical laboratory for null controllability of degenerate parabolic
//! equations `∂t z − Div(A∇z) = χ_ω₀ g` on the unit hypercube.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]


pub mod cli;
pub mod coeff;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod grid;
pub mod hum;
pub mod pde;
pub mod sparse;
pub mod weights;

pub use error::{Error, Result};
