//! Extended Pearcey kernel numerics.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod cli;
pub mod contours;
pub mod error;
pub mod finite_n;
pub mod fredholm;
mod gauss;
pub mod higher_order;
pub mod kernels;
pub mod pde;
mod plot;
pub mod simulator;
pub mod special;
pub mod split;

pub use error::{Error, Result};
pub use gauss::{gauss_interval, gauss_legendre};
