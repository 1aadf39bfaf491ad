//! Stationary noncausal solutions of purely explosive autoregressions.
//!
//! For `theta` with all characteristic roots outside the unit circle the
//! recursion `Y_n = theta_1 Y_{n-1} + ... + theta_d Y_{n-d} + Z_n` has exactly
//! one stationary solution, a moving average of *future* innovations. This
//! crate builds it, computes its second-order structure exactly, and checks
//! the limit laws of the associated statistics by Monte Carlo.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod companion;
pub mod error;
pub mod estimation;
pub mod export;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod moments;
pub mod noise;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{ModelSpec, NoiseFamily, NoiseSpec};
