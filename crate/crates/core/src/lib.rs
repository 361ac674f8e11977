//! Architecture distribution search over normalizing flows.
//!
//! The crate trains a distribution over coupling-cell architectures of a
//! Glow-style flow by maximizing a Monte-Carlo WAIC objective, builds a
//! probability-weighted ensemble of retrained architectures from it, and
//! scores inputs by per-sample WAIC for out-of-distribution detection.

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod ood;
pub mod rng;
pub mod search;
pub mod tensor;
pub mod train;
pub mod waic;

pub use error::{Error, Result};
pub use tensor::Tensor;
