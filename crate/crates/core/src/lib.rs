//! Point-to-hyperplane nearest-neighbor hashing.
//!
//! Randomized hash families (AH, EH, BH) with their collision
//! probabilities, a learned bilinear family (LBH), single- and multi-table
//! Hamming indexes with flipped-code lookup, brute-force evaluation, and a
//! margin-based SVM active-learning harness built on top of them.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod index;
pub mod io;
pub mod learn;
pub mod rand_hash;
pub mod rng;

pub use error::{Error, Result};
pub use geometry::{Dataset, HyperplaneQuery};
