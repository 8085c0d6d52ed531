//! Globally normalized streaming transducer toolkit.
//!
//! Lattice algebra over unnormalized per-node log-weights, a small causal
//! transducer, local/global/interpolated objectives, streaming beam search,
//! latency in the expectation semiring, and a training loop.

pub mod data;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod latency;
pub mod lattice;
pub mod logspace;
pub mod losses;
pub mod model;
pub mod registry;
pub mod rng;
pub mod search;
pub mod training;
pub mod wer;

pub use error::{Error, Result};
