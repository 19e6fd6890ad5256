//! Simulation and diagnostics for regime-switching SDEs driven by
//! subordinated Brownian motion.

// Negated comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

mod error;

pub mod diagnostics;
pub mod engine;
pub mod flows;
pub mod hormander;
pub mod levy;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod switching;

pub use error::{Error, Result};
