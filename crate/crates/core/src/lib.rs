//! Gaussian random-matrix ensembles perturbed by a rank-one channel coupling.

// `!(x > 0.0)` style guards reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod eigh;
pub mod ensembles;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod quad;
pub mod rank_one;
pub mod rng;
pub mod special;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
