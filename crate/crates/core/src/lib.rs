//! Robust transfer learning for high-dimensional linear regression.
//!
//! The crate fits elastic-net penalized Huber regressions ([`solver`]),
//! combines a target sample with auxiliary source samples through a
//! fuse-then-debias estimator ([`transfer`]), selects which sources to pool
//! by cross-fitted validation losses ([`detect`]), and ships generators and
//! an experiment harness for simulation studies ([`simgen`], [`experiments`]).

pub mod detect;
pub mod error;
pub mod experiments;
pub mod model;
pub mod rng;
pub mod simgen;
pub mod solver;
pub mod transfer;

pub use error::{Error, Result};
pub use model::{l1_distance, standardize, CoefVector, Dataset, StandardizationStats};
