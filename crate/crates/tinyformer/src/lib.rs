//! Encoder-only transformer for in-context empirical Bayes on Poisson counts.
//!
//! Counts enter through a two-feature affine embedding, pass through pre-norm blocks
//! with softmax or linear attention (no positional encoding, no masking) and leave
//! through a scalar linear decoder. Gradients are computed by hand; training uses Adam.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod estimator;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod params;
pub mod train;

pub use config::{AttentionKind, ModelConfig};
pub use error::{Error, Result};
pub use estimator::TransformerEstimator;
pub use model::{forward, forward_capture, loss_and_grad};
pub use params::ModelParams;
pub use train::{train, EpochLog, TrainSchedule};
