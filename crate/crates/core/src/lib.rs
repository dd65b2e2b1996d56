//! Music-to-dance translation as sequence-to-sequence learning.
//!
//! The pipeline turns raw audio into 60 Hz feature vectors, converts 3D
//! skeleton keypoints into robot joint angles, pairs the two streams by
//! timestamp, and trains either a Transformer or a Mamba-style state-space
//! model to autoregressively translate audio windows into joint-angle poses.
//! Evaluation uses average joint error and a Fréchet distance between
//! pose-space Gaussians.

mod binio;
pub mod audio;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pose;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
