//! Participant-routed MLP classifiers for multi-source tabular prediction.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a dense ReLU network with inverted dropout, softmax cross-entropy,
//!   Adam, per-sample loss tracing and parameter snapshots.
//! - [`clustering`]: standardization, K-means with k-means++ restarts,
//!   silhouette scores, WCSS curves and chord-distance knee detection.
//! - [`data`]: the participant-day schema, CSV ingestion, gap segmentation,
//!   label window expansion, splits, resampling and a synthetic generator.
//! - [`strategies`]: baseline, feature-clustered, loss-clustered (fully or
//!   final-layer separated) and ID-embedding models plus their routing.
//! - [`eval`]: confusion metrics per sex, grid search, Monte-Carlo
//!   cross-validation and the resampled train/test protocol.
//! - [`analysis`]: exact t-SNE and per-participant loss histograms.
//!
//! All randomness is derived from a root seed through named streams
//! (see [`rng`]), so results do not depend on thread scheduling.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod clustering;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod strategies;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Number of per-day input features in the dataset schema.
pub const NUM_FEATURES: usize = 20;
