//! Multi-task multi-stage temporal convolutional segmenters.
//!
//! Variant A resamples every robot phase to a fixed length before the
//! network; variant B keeps the original length and adds a robot-action
//! head. Both predict the human action per frame and the trial outcome.

mod loss;
mod model;
mod resample;
mod train;

use serde::{Deserialize, Serialize};

use crate::features::{BACKBONE_WIDTH, ENCODER_CHANNELS};
use crate::modality::Modalities;

pub use loss::{loss_segcls, loss_smooth, loss_total, HeadGrads, LossBreakdown, Targets};
pub use model::{Mstcn, SegmentationOutput, StageOutput};
pub use resample::{inverse_indices, model_segments, resample_indices, resample_per_robot_action};
pub use train::{
    evaluate_segmenter, evaluate_segmenter_with, predict, prepare_trial, train_segmenter, EpochRecord, Prediction,
    PredictionFile, PreparedTrial, SegmenterCheckpoint, TrainConfig, TrainHistory, Vocabularies,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MstcnVariant {
    A,
    B,
}

/// Which supervised heads contribute to the loss. The outcome head always does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActiveHeads {
    pub human: bool,
    pub robot: bool,
}

impl ActiveHeads {
    pub const ALL: ActiveHeads = ActiveHeads { human: true, robot: true };
    pub const CLS_ONLY: ActiveHeads = ActiveHeads { human: false, robot: false };
    pub const HUMAN: ActiveHeads = ActiveHeads { human: true, robot: false };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstcnConfig {
    pub variant: MstcnVariant,
    pub stages: usize,
    pub layers_per_stage: usize,
    pub channels: usize,
    pub dropout: f64,
    /// Smoothing-loss weight.
    pub lambda: f64,
    /// Truncation of the absolute log-probability difference.
    pub tau: f64,
    /// Stop the smoothing gradient through the previous frame.
    pub detach_previous: bool,
    /// Frames per robot action after resampling (variant A).
    pub resample_len: usize,
    pub modalities: Modalities,
    pub heads: ActiveHeads,
    pub backbone_width: usize,
    pub encoder_channels: usize,
}

impl MstcnConfig {
    pub fn new(variant: MstcnVariant, modalities: Modalities, heads: ActiveHeads) -> Self {
        MstcnConfig {
            variant,
            stages: 2,
            layers_per_stage: 10,
            channels: 64,
            dropout: 0.5,
            lambda: 0.15,
            tau: 4.0,
            detach_previous: false,
            resample_len: 100,
            modalities,
            heads,
            backbone_width: BACKBONE_WIDTH,
            encoder_channels: ENCODER_CHANNELS,
        }
    }

    /// Robot head exists only for variant B with the robot loss enabled.
    pub fn has_robot_head(&self) -> bool {
        self.variant == MstcnVariant::B && self.heads.robot
    }

    /// Width of the first stage's input.
    pub fn input_width(&self) -> usize {
        let mut w = 0;
        if self.modalities.video {
            w += self.backbone_width;
        }
        if self.modalities.has_signals() {
            w += self.encoder_channels;
        }
        w
    }

    /// Frames on either side that can influence one first-stage output.
    pub fn receptive_reach(&self) -> usize {
        (0..self.layers_per_stage).map(|l| 1usize << l).sum::<usize>()
            + if self.modalities.has_signals() { 2 * (crate::features::ENCODER_KERNEL / 2) } else { 0 }
    }
}
