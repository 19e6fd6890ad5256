//! Statistical checks on simulated samples: spectrum tails, negative
//! moments, the Norris event, the large-jump decomposition, the gradient
//! representation and kernel density estimates.
//!
//! Smoothness of the law is not observable directly; these diagnostics
//! probe its preconditions and qualitative consequences.

pub mod decomposition;
pub mod gradrep;
pub mod kde;
pub mod ks;
pub mod norris;
pub mod spectrum;

pub use decomposition::{decomposition_ks_test, decomposition_self_test, DecompositionReport};
pub use gradrep::{gradient_representation_check, GradRepReport};
pub use kde::{kde_density, DensityEstimate};
pub use norris::{norris_joint_probability, NorrisParams, NorrisReport};
pub use spectrum::{eigen_tail, negative_moment, MomentEstimate, TailCurve};
