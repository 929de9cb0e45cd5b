//! Cascaded GRU networks for hyperspectral pixel classification.
//!
//! A pixel spectrum is cut into contiguous band groups; one shared GRU
//! summarizes each group, and a second GRU runs over the group summaries.
//! Two variants connect the first layer to the output (weighted feature
//! concatenation and a weighted multi-head loss), and a spectral-spatial
//! model replaces raw band values by per-band CNN features. All gradients
//! are computed by hand.

mod bytes;
pub mod cascade;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod spatial;

pub use error::{Error, Result};
pub use numerics::Tensor;
