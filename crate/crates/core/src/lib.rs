//! Detection of sequential learner behaviors with a constrained
//! convolutional model whose filters are curated into an interpretable
//! pattern bank.

// Negated float comparisons are how NaN gets rejected; index loops walk
// parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod curator;
pub mod error;
pub mod evalmetrics;
pub mod netcore;
pub mod objective;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
