//! Measuring how hard it is to poison individual subpopulations of a dataset
//! when the victim trains a regularized hinge-loss linear classifier.
//!
//! The crate is organized bottom-up:
//!
//! - [`dataspace`]: datasets, the two-knob synthetic generator and the UCI Adult loader.
//! - [`learner`]: hinge loss, exact ERM training and evaluation of linear SVMs.
//! - [`subpops`]: ClusterMatch / FeatureMatch subpopulation generation.
//! - [`targets`]: label-flip target models filed by subpopulation error level.
//! - [`attacks`]: the model-targeted (MTP) attack with its certified lower bound, and the KKT attack.
//! - [`harness`]: the three-phase pipeline, the JSONL result store and resumable sweeps.
//! - [`analysis`]: subpopulation factors, correlations and report emission.
//!
//! Runnable walkthroughs live in this crate's `examples/` directory.

pub mod analysis;
pub mod attacks;
pub mod dataspace;
mod error;
pub mod harness;
pub mod learner;
pub mod rng;
pub mod subpops;
pub mod targets;

pub use error::{Error, Result};
