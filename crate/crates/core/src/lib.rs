//! Simulation, hypothesis checking and control search for multi-term
//! time-fractional stochastic evolution equations with non-instantaneous
//! impulses, realized on a truncated Dirichlet-Laplacian eigenbasis.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::excessive_precision)]

pub mod config;
pub mod control;
pub mod error;
pub mod experiment;
pub mod hypotheses;
pub mod impulse;
pub mod kernels;
pub mod laplace;
pub mod quad;
pub mod resolvent;
pub mod solver;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
