//! Model inputs: uniform clips, optical flow, backbone features and the
//! F-T/gripper encoder.

mod backbone;
mod cache;
mod clip;
mod encoder;
mod flow;

use ndarray::Array2;

use crate::dataset::{AlignedTrial, AnnotationTrack, NormalizationStats, TrialMeta, Wrench};
use crate::labels::{to_model_track, RobotActionModel};

pub use backbone::{
    causal_window, extract_frame_features, preprocess_frame, Backbone, FrameGeometry, FrameTensor,
    RandomProjectionEncoder, SpatiotemporalEncoder, BACKBONE_WIDTH, STREAM_WIDTH, WINDOW,
};
pub use cache::{list_cached, list_versions, load_features, write_features, FeatureSidecar};
pub use clip::{sample_uniform_clip, uniform_indices, ClipInput, CLIP_LEN};
pub use encoder::{EncoderTrace, FtGripperEncoder, ENCODER_CHANNELS, ENCODER_KERNEL};
pub use flow::{compute_optical_flow, tvl1_flow, FlowField, Gray, Tvl1Params, FLOW_CLIP_PX};

/// Per-frame model input for the segmenters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub meta: TrialMeta,
    /// `T × 2048`: RGB stream then flow stream.
    pub backbone: Array2<f64>,
    /// `T × 6` F-T (raw as aligned until [`FeatureSequence::normalized`]).
    pub ft: Array2<f64>,
    /// `T × 1` discretized gripper state.
    pub gripper: Array2<f64>,
    pub labels: Option<AnnotationTrack>,
    pub backbone_version: String,
}

impl FeatureSequence {
    pub fn from_aligned(trial: &AlignedTrial, backbone: Array2<f64>, backbone_version: String) -> Self {
        FeatureSequence {
            meta: trial.meta.clone(),
            backbone,
            ft: wrench_matrix(&trial.ft),
            gripper: Array2::from_shape_vec((trial.len(), 1), trial.gripper.clone()).expect("T × 1"),
            labels: trial.labels.clone(),
            backbone_version,
        }
    }

    pub fn len(&self) -> usize {
        self.backbone.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trial_id(&self) -> &str {
        &self.meta.trial_id
    }

    pub fn robot_model_track(&self) -> Option<Vec<RobotActionModel>> {
        self.labels.as_ref().map(|l| to_model_track(&l.robot_actions))
    }

    pub fn ft_rows(&self) -> Vec<Wrench> {
        self.ft.rows().into_iter().map(|r| std::array::from_fn(|c| r[c])).collect()
    }

    pub fn normalized(&self, stats: &NormalizationStats) -> FeatureSequence {
        let mut out = self.clone();
        for mut row in out.ft.rows_mut() {
            for c in 0..6 {
                row[c] = (row[c] - stats.mean[c]) / stats.std[c];
            }
        }
        out
    }

    /// Rows at the given frame indices (labels follow).
    pub fn select(&self, indices: &[usize]) -> FeatureSequence {
        FeatureSequence {
            meta: self.meta.clone(),
            backbone: self.backbone.select(ndarray::Axis(0), indices),
            ft: self.ft.select(ndarray::Axis(0), indices),
            gripper: self.gripper.select(ndarray::Axis(0), indices),
            labels: self.labels.as_ref().map(|l| l.select(indices)),
            backbone_version: self.backbone_version.clone(),
        }
    }
}

pub fn wrench_matrix(ft: &[Wrench]) -> Array2<f64> {
    Array2::from_shape_vec((ft.len(), 6), ft.iter().flatten().copied().collect()).expect("T × 6")
}
