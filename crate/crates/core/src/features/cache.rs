//! Feature cache: `<root>/<backbone_version>/<trial_id>.npz` holding
//! `backbone` (T×2048, f32), `ft` (T×6) and `gripper` (T×1), with a JSON
//! sidecar `<trial_id>.json` carrying metadata and label tracks.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use ndarray_npy::{NpzReader, NpzWriter};
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::dataset::{compress_track, expand_segments, AnnotationTrack, TrialMeta};
use crate::error::{Error, Result};
use crate::labels::{HumanAction, OutcomeLabel, RobotActionFull};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub meta: TrialMeta,
    pub backbone_version: String,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_actions: Option<Vec<(usize, usize, HumanAction)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_actions: Option<Vec<(usize, usize, RobotActionFull)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeLabel>,
}

fn sanitize(version: &str) -> String {
    version.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.+@".contains(c) { c } else { '_' }).collect()
}

fn version_dir(root: &Path, version: &str) -> PathBuf {
    root.join(sanitize(version))
}

/// Write to a temporary sibling, then rename into place.
fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_features(root: &Path, seq: &FeatureSequence) -> Result<PathBuf> {
    let dir = version_dir(root, &seq.backbone_version);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let npz_path = dir.join(format!("{}.npz", seq.trial_id()));
    atomic_write(&npz_path, |tmp| {
        let file = File::create(tmp).map_err(|e| Error::io(tmp, e))?;
        let mut npz = NpzWriter::new(file);
        let npy_err = |e: ndarray_npy::WriteNpzError| Error::schema(tmp, e.to_string());
        npz.add_array("backbone", &seq.backbone.mapv(|v| v as f32)).map_err(npy_err)?;
        npz.add_array("ft", &seq.ft).map_err(npy_err)?;
        npz.add_array("gripper", &seq.gripper).map_err(npy_err)?;
        npz.finish().map_err(npy_err)?;
        Ok(())
    })?;

    let sidecar = FeatureSidecar {
        meta: seq.meta.clone(),
        backbone_version: seq.backbone_version.clone(),
        frames: seq.len(),
        human_actions: seq.labels.as_ref().map(|l| compress_track(&l.human_actions)),
        robot_actions: seq.labels.as_ref().map(|l| compress_track(&l.robot_actions)),
        outcome: seq.labels.as_ref().map(|l| l.outcome),
    };
    let json_path = dir.join(format!("{}.json", seq.trial_id()));
    atomic_write(&json_path, |tmp| {
        fs::write(tmp, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(tmp, e))
    })?;
    Ok(npz_path)
}

pub fn load_features(root: &Path, version: &str, trial_id: &str) -> Result<FeatureSequence> {
    let dir = version_dir(root, version);
    let json_path = dir.join(format!("{trial_id}.json"));
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let side: FeatureSidecar = serde_json::from_str(&text).map_err(|e| Error::schema(&json_path, e.to_string()))?;

    let npz_path = dir.join(format!("{trial_id}.npz"));
    let file = File::open(&npz_path).map_err(|e| Error::io(&npz_path, e))?;
    let mut npz = NpzReader::new(file).map_err(|e| Error::schema(&npz_path, e.to_string()))?;
    let backbone: Array2<f32> = npz.by_name("backbone").map_err(|e| Error::schema(&npz_path, e.to_string()))?;
    let ft: Array2<f64> = npz.by_name("ft").map_err(|e| Error::schema(&npz_path, e.to_string()))?;
    let gripper: Array2<f64> = npz.by_name("gripper").map_err(|e| Error::schema(&npz_path, e.to_string()))?;

    let t = side.frames;
    if backbone.nrows() != t || ft.dim() != (t, 6) || gripper.dim() != (t, 1) {
        return Err(Error::schema(&npz_path, "array shapes disagree with sidecar frame count"));
    }
    let labels = match (side.human_actions, side.robot_actions, side.outcome) {
        (Some(h), Some(r), Some(outcome)) => Some(AnnotationTrack {
            human_actions: expand_segments(&h, t)?,
            robot_actions: expand_segments(&r, t)?,
            outcome,
        }),
        _ => None,
    };
    Ok(FeatureSequence {
        meta: side.meta,
        backbone: backbone.mapv(f64::from),
        ft,
        gripper,
        labels,
        backbone_version: side.backbone_version,
    })
}

/// Backbone versions present under `root`, read from one sidecar per
/// version directory, sorted.
pub fn list_versions(root: &Path) -> Result<Vec<String>> {
    let mut versions = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let dir = entry.map_err(|e| Error::io(root, e))?.path();
        if !dir.is_dir() {
            continue;
        }
        let sidecar = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .find(|p| p.extension().is_some_and(|e| e == "json"));
        if let Some(path) = sidecar {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let side: FeatureSidecar = serde_json::from_str(&text).map_err(|e| Error::schema(&path, e.to_string()))?;
            versions.push(side.backbone_version);
        }
    }
    versions.sort();
    versions.dedup();
    Ok(versions)
}

/// Trial ids with cached features for `version`, sorted.
pub fn list_cached(root: &Path, version: &str) -> Result<Vec<String>> {
    let dir = version_dir(root, version);
    let mut ids: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "npz"))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .filter(|id| dir.join(format!("{id}.json")).is_file())
        .collect();
    ids.sort();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{RobotPlatform, Task};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = 5;
        let seq = FeatureSequence {
            meta: TrialMeta {
                trial_id: "trial_7".into(),
                robot_platform: RobotPlatform::KinovaGen3,
                task: Task::H2R,
                participant_id: "p3".into(),
                object_class: "cup".into(),
            },
            backbone: Array2::from_shape_fn((t, 2048), |(i, j)| ((i * 7 + j) % 13) as f64 * 0.25),
            ft: Array2::from_shape_fn((t, 6), |(i, j)| i as f64 * 0.1 - j as f64),
            gripper: Array2::from_elem((t, 1), -0.5),
            labels: Some(AnnotationTrack {
                human_actions: vec![
                    HumanAction::Idle,
                    HumanAction::Idle,
                    HumanAction::Approach,
                    HumanAction::Transfer,
                    HumanAction::Retract,
                ],
                robot_actions: vec![
                    RobotActionFull::Approach,
                    RobotActionFull::Approach,
                    RobotActionFull::Transfer,
                    RobotActionFull::Transfer,
                    RobotActionFull::Retract,
                ],
                outcome: OutcomeLabel::NoRelease,
            }),
            backbone_version: "test/v1".into(),
        };
        write_features(dir.path(), &seq).unwrap();
        assert_eq!(list_cached(dir.path(), "test/v1").unwrap(), vec!["trial_7".to_string()]);
        let back = load_features(dir.path(), "test/v1", "trial_7").unwrap();
        assert_eq!(back, seq);
        assert_eq!(list_versions(dir.path()).unwrap(), vec!["test/v1".to_string()]);
    }
}
