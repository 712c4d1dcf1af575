//! Numerical laboratory for Beurling generalized prime systems built from
//! a continuous Riemann prime-counting measure with oscillating blocks.

pub mod construction;
pub mod contour;
pub mod counting;
pub mod discretize;
pub mod error;
pub mod hp;
pub mod logcomplex;
pub mod measures;
pub mod quad;
pub mod rng;
pub mod saddle;
pub mod special;
pub mod zeta;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
