//! Differentially private release of group-by-sum histograms over
//! (activity, metric, region, direction) cells, with simulated federated
//! clients, a synthetic mobility data generator and a weighted
//! relative-error evaluation harness.
//!
//! Three release strategies are provided in [`mechanisms`]: a per-slice
//! budget split, a single joint clip, and per-(activity, metric) scaling
//! ahead of a single joint clip.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod client;
pub mod datagen;
pub mod dp;
pub mod error;
pub mod eval;
pub mod formats;
pub mod mechanisms;
pub mod schema;

pub use error::{Error, Result};
