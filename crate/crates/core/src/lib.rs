//! Adversarial covering-number bounds for feedforward networks.
//!
//! The crate computes norm profiles and generalization bounds for
//! adversarially trained networks, runs the attacks those bounds are stated
//! against, estimates empirical Rademacher complexities by Monte Carlo, and
//! checks the covering constructions numerically.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod bounds;
pub mod covers;
pub mod data;
pub mod error;
pub mod linalg;
pub mod network;
pub mod par;
pub mod rademacher;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
