//! File formats, run directories, plots and the command line around
//! [`actress_core`].

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod reports;
pub mod threads;
pub mod workflow;

pub use error::{Error, Result};
