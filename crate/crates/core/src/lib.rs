//! Semi-supervised visual grounding with attribution-curated pseudo labels.
//!
//! The crate is `no_std` with `alloc`. It holds the whole pipeline: box
//! geometry, a procedural grounding benchmark, a small transformer with a
//! hand-written backward pass, relevance propagation, pseudo-label scoring
//! and selection, the burn-in / active-retraining loop and evaluation.
//! File formats, plotting and the command line live in the `actress` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attribution;
pub mod curation;
pub mod error;
pub mod evalreport;
pub mod exec;
pub mod geometry;
pub mod model;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
