//! Handover trial data model, ingestion and preprocessing.

mod align;
mod gripper;
mod load;
mod normalize;
mod robot_actions;
mod split;

use std::path::PathBuf;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{HumanAction, OutcomeLabel, RobotActionFull, RobotPlatform, Task};

pub use align::{align_to_frames, nearest_index};
pub use gripper::{discretize_gripper, GripperCalibration, GripperCalibrations, GRIPPER_LEVELS};
pub use load::{load_dataset, load_trial, write_trial, AnnotationFile, ANNOTATION_FILE, FT_FILE, JOINTS_FILE};
pub use normalize::{compute_ft_stats, compute_ft_stats_by_platform, normalize_ft, NormalizationStats};
pub use robot_actions::{extract_robot_actions, MotionParams};
pub use split::{split_by_participant, SplitSet, SplitSpec};

/// One F-T sample: forces (N) then torques (N·m).
pub type Wrench = [f64; 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub trial_id: String,
    pub robot_platform: RobotPlatform,
    pub task: Task,
    pub participant_id: String,
    pub object_class: String,
}

/// Where the pixels of a video live. Frames are decoded on demand so that a
/// full dataset can be indexed without holding every image in memory.
#[derive(Debug, Clone)]
pub enum VideoSource {
    Frames(Vec<PathBuf>),
    InMemory(Arc<Vec<RgbImage>>),
    Container(PathBuf),
}

#[derive(Debug, Clone)]
pub struct VideoStream {
    pub timestamps: Vec<f64>,
    pub source: VideoSource,
}

impl VideoStream {
    pub fn in_memory(timestamps: Vec<f64>, frames: Vec<RgbImage>) -> Self {
        VideoStream { timestamps, source: VideoSource::InMemory(Arc::new(frames)) }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn frame(&self, idx: usize) -> Result<RgbImage> {
        match &self.source {
            VideoSource::InMemory(frames) => {
                frames.get(idx).cloned().ok_or_else(|| Error::ShapeError(format!("frame {idx} out of range")))
            }
            VideoSource::Frames(paths) => {
                let path = paths.get(idx).ok_or_else(|| Error::ShapeError(format!("frame {idx} out of range")))?;
                Ok(image::open(path)?.to_rgb8())
            }
            VideoSource::Container(path) => Err(Error::UnsupportedVideo(path.clone())),
        }
    }

    pub fn frames(&self) -> Result<Vec<RgbImage>> {
        (0..self.len()).map(|i| self.frame(i)).collect()
    }

    /// Select a subset of frames (indices may repeat).
    pub fn select(&self, indices: &[usize]) -> VideoStream {
        let timestamps = indices.iter().map(|&i| self.timestamps[i]).collect();
        let source = match &self.source {
            VideoSource::InMemory(f) => {
                VideoSource::InMemory(Arc::new(indices.iter().map(|&i| f[i].clone()).collect()))
            }
            VideoSource::Frames(p) => VideoSource::Frames(indices.iter().map(|&i| p[i].clone()).collect()),
            VideoSource::Container(p) => VideoSource::Container(p.clone()),
        };
        VideoStream { timestamps, source }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FtStream {
    pub timestamps: Vec<f64>,
    pub samples: Vec<Wrench>,
}

/// Joint states sampled on a common clock. `arm_*` are indexed `[sample][joint]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JointStates {
    pub timestamps: Vec<f64>,
    pub arm_joints: Vec<String>,
    pub position: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
    pub effort: Vec<Vec<f64>>,
    pub gripper_pos: Vec<f64>,
}

impl JointStates {
    /// Mean absolute arm-joint velocity per sample (gripper excluded).
    pub fn arm_speed(&self) -> Vec<f64> {
        self.velocity
            .iter()
            .map(|v| if v.is_empty() { 0.0 } else { v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTrack {
    pub human_actions: Vec<HumanAction>,
    pub robot_actions: Vec<RobotActionFull>,
    pub outcome: OutcomeLabel,
}

impl AnnotationTrack {
    pub fn len(&self) -> usize {
        self.human_actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.human_actions.is_empty()
    }

    pub fn validate(&self, frames: usize, task: Task) -> Result<()> {
        if self.human_actions.len() != frames || self.robot_actions.len() != frames {
            return Err(Error::InvariantViolation(format!(
                "annotation lengths ({}, {}) differ from frame count {frames}",
                self.human_actions.len(),
                self.robot_actions.len()
            )));
        }
        if self.robot_actions.windows(2).any(|w| w[1].index() < w[0].index()) {
            return Err(Error::InvariantViolation("robot actions out of canonical order".into()));
        }
        if !self.outcome.valid_for(task) {
            return Err(Error::InvariantViolation(format!("outcome {} is not valid for task {task}", self.outcome)));
        }
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> AnnotationTrack {
        AnnotationTrack {
            human_actions: indices.iter().map(|&i| self.human_actions[i]).collect(),
            robot_actions: indices.iter().map(|&i| self.robot_actions[i]).collect(),
            outcome: self.outcome,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub meta: TrialMeta,
    pub video: VideoStream,
    pub ft_raw: FtStream,
    pub joint_states: JointStates,
    pub annotations: Option<AnnotationTrack>,
}

impl TrialRecord {
    pub fn trial_id(&self) -> &str {
        &self.meta.trial_id
    }

    pub fn validate(&self) -> Result<()> {
        strictly_increasing(&self.video.timestamps, "video")?;
        strictly_increasing(&self.ft_raw.timestamps, "ft")?;
        strictly_increasing(&self.joint_states.timestamps, "joints")?;
        if self.ft_raw.samples.len() != self.ft_raw.timestamps.len() {
            return Err(Error::InvariantViolation("ft sample/timestamp count mismatch".into()));
        }
        let js = &self.joint_states;
        let n = js.timestamps.len();
        if js.position.len() != n || js.velocity.len() != n || js.effort.len() != n || js.gripper_pos.len() != n {
            return Err(Error::InvariantViolation("joint state column lengths differ".into()));
        }
        if let VideoSource::Frames(paths) = &self.video.source {
            if paths.len() != self.video.timestamps.len() {
                return Err(Error::InvariantViolation(format!(
                    "{} frames but {} frame timestamps",
                    paths.len(),
                    self.video.timestamps.len()
                )));
            }
        }
        if let Some(ann) = &self.annotations {
            ann.validate(self.video.len(), self.meta.task)?;
        }
        Ok(())
    }
}

/// A trial resampled onto its video frame clock.
#[derive(Debug, Clone)]
pub struct AlignedTrial {
    pub meta: TrialMeta,
    pub frames: VideoStream,
    pub ft: Vec<Wrench>,
    pub gripper: Vec<f64>,
    /// Mean absolute arm-joint velocity at each frame.
    pub arm_speed: Vec<f64>,
    pub labels: Option<AnnotationTrack>,
}

impl AlignedTrial {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if self.ft.len() != t || self.gripper.len() != t || self.arm_speed.len() != t {
            return Err(Error::InvariantViolation("aligned arrays differ in length".into()));
        }
        if let Some(g) = self.gripper.iter().find(|g| !GRIPPER_LEVELS.contains(g)) {
            return Err(Error::InvariantViolation(format!("gripper value {g} outside {{-0.5, 0, 0.5}}")));
        }
        if let Some(ann) = &self.labels {
            ann.validate(t, self.meta.task)?;
        }
        Ok(())
    }
}

fn strictly_increasing(ts: &[f64], what: &str) -> Result<()> {
    if let Some(i) = ts.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::InvariantViolation(format!("{what} timestamps not strictly increasing at index {}", i + 1)));
    }
    Ok(())
}

/// Expand `(start, end_inclusive, label)` runs into a per-frame track.
pub fn expand_segments<L: Copy>(segments: &[(usize, usize, L)], frames: usize) -> Result<Vec<L>> {
    let mut out = Vec::with_capacity(frames);
    for &(start, end, label) in segments {
        if start != out.len() || end < start {
            return Err(Error::InvariantViolation(format!(
                "segment [{start}, {end}] is not contiguous with frame {}",
                out.len()
            )));
        }
        out.extend(std::iter::repeat_n(label, end - start + 1));
    }
    if out.len() != frames {
        return Err(Error::InvariantViolation(format!("segments cover {} frames, video has {frames}", out.len())));
    }
    Ok(out)
}

/// Inverse of [`expand_segments`].
pub fn compress_track<L: Copy + PartialEq>(track: &[L]) -> Vec<(usize, usize, L)> {
    let mut out: Vec<(usize, usize, L)> = Vec::new();
    for (i, &l) in track.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.2 == l => last.1 = i,
            _ => out.push((i, i, l)),
        }
    }
    out
}
