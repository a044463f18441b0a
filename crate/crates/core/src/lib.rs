//! Minimax-optimal randomized designs for two-arm controlled experiments.
//!
//! A design is a probability distribution over balanced treatment/control
//! assignments. When mean outcomes are only known to lie in a kernel-induced
//! function class, each design carries a worst-case contribution to the
//! variance of the difference-in-means estimator. This crate evaluates that
//! worst case, optimizes designs against it (with or without a cap on
//! assignment probabilities that preserves randomization tests), and compares
//! the results against classical complete randomization, single fixed
//! partitions, and covariate-balance rerandomization — exactly, at the small
//! sample sizes where every balanced assignment can be enumerated.

// Negated comparisons like `!(x > 0.0)` deliberately treat NaN as a failure,
// and the index-based loops track the usual statements of the eigensolver
// and interior-point updates.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::excessive_precision)]
#![allow(clippy::manual_is_multiple_of)]
#![allow(clippy::manual_div_ceil)]
#![allow(clippy::enum_variant_names)]

pub mod config;
pub mod designs;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod numerics;
pub mod optimizer;
pub mod rerand;
pub mod risk;
pub mod sim;

mod jsonfmt;

pub use error::{Error, Result};
