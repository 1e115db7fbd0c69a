//! Experiment drivers: synthetic regret sweeps, timing, Robbins certification, probes,
//! real-data scoring and ranking statistics.

pub mod certify;
pub mod error;
pub mod probes;
pub mod real;
pub mod stats;
pub mod synthetic;
pub mod timing;

pub use error::{Error, Result};
