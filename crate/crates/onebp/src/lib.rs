//! Two-tower one-class collaborative filtering with swappable
//! backpropagation strategies.
//!
//! The pipeline: parse an interaction log into a dense dataset, split it
//! per-user, train the two embedding tables with one of three update
//! strategies (gradient on both towers, gradient on items with
//! moving-aggregation users, or the flipped ablation), then evaluate top-K
//! rankings and explore latent item types via k-means.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
