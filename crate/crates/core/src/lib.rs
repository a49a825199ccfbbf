//! Multimodal handover failure detection.
//!
//! Trials of robot-to-human and human-to-robot object handovers (video,
//! wrist force-torque, gripper state) are aligned to the video clock and fed
//! to two families of models: clip-level fusion classifiers that predict the
//! trial outcome, and multi-stage temporal convolutional segmenters that label
//! every frame with the human's action while also predicting the outcome.
//! A non-learned correlation baseline, the evaluation metrics and a synthetic
//! trial generator round out the crate.

pub mod classifiers;
pub mod correlation;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod features;
pub mod labels;
pub mod metrics;
pub mod modality;
pub mod nn;
pub mod segmentation;
pub mod synthetic;

pub use error::{Error, Result};
