//! Minimax robust Kalman filtering for linear Gaussian state-space models
//! whose true law lies in a Kullback-Leibler ball around the nominal one.
//!
//! The crate covers the forward robust filter recursion, synthesis of the
//! least favorable model by a backward recursion, its convergence
//! certificate, and the performance comparison against the standard Kalman
//! filter.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod error;
pub mod least_favorable;
pub mod model;
pub mod numerics;
pub mod performance;
pub mod robust_filter;

pub use error::{Error, Result};
pub use model::{KlScale, StateSpaceModel, Tolerance};
pub use numerics::SymMatrix;

/// Library version, embedded in serialized results.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
