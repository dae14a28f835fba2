//! Multi-task sequence models for learning-path recommendation.
//!
//! A shared LSTM encoder feeds two heads: a softmax head that proposes the
//! next items in a study path, and a sigmoid head that tracks the
//! probability of answering each item correctly. Training couples the two
//! through a joint loss with a differentiable repetition penalty. The
//! crate also ships the data pipeline for interaction logs, six
//! single-task baselines, evaluation metrics, and a CLI that drives the
//! whole experiment cycle reproducibly.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod train;
pub mod numerics;

pub use error::{Error, Result};
