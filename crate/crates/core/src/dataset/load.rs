//! On-disk trial layout:
//!
//! ```text
//! <trial_id>/
//!   frames/%06d.png + frame_timestamps.csv   (or video.mp4 + frame_timestamps.csv)
//!   ft.csv            t,fx,fy,fz,tx,ty,tz
//!   joints.csv        t,<joint>_pos,<joint>_vel,<joint>_effort,...,gripper_pos
//!   annotations.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    compress_track, expand_segments, AnnotationTrack, FtStream, JointStates, TrialMeta, TrialRecord, VideoSource,
    VideoStream,
};
use crate::error::{Error, Result};
use crate::labels::{HumanAction, OutcomeLabel, RobotActionFull, RobotPlatform, Task};

pub const FT_FILE: &str = "ft.csv";
pub const JOINTS_FILE: &str = "joints.csv";
pub const ANNOTATION_FILE: &str = "annotations.json";
const FRAMES_DIR: &str = "frames";
const FRAME_TIMESTAMPS: &str = "frame_timestamps.csv";
const VIDEO_FILE: &str = "video.mp4";
const FT_COLUMNS: [&str; 6] = ["fx", "fy", "fz", "tx", "ty", "tz"];
const GRIPPER_COLUMN: &str = "gripper_pos";

/// `annotations.json`. Label fields are absent for unlabeled (inference) trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_actions: Option<Vec<(usize, usize, HumanAction)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_actions: Option<Vec<(usize, usize, RobotActionFull)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeLabel>,
    pub task: Task,
    pub robot: RobotPlatform,
    pub participant_id: String,
    pub object_class: String,
}

pub fn load_trial(dir: &Path) -> Result<TrialRecord> {
    let trial_id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::schema(dir, "trial directory has no name"))?
        .to_string();

    let ann_path = require(dir, ANNOTATION_FILE)?;
    let text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let ann: AnnotationFile = serde_json::from_str(&text).map_err(|e| Error::schema(&ann_path, e.to_string()))?;

    let video = load_video(dir)?;
    let ft_raw = load_ft(&require(dir, FT_FILE)?)?;
    let joint_states = load_joints(&require(dir, JOINTS_FILE)?)?;

    let frames = video.len();
    let annotations = match (&ann.human_actions, &ann.robot_actions, ann.outcome) {
        (Some(h), Some(r), Some(outcome)) => Some(AnnotationTrack {
            human_actions: expand_segments(h, frames)?,
            robot_actions: expand_segments(r, frames)?,
            outcome,
        }),
        (None, None, None) => None,
        _ => return Err(Error::schema(&ann_path, "human_actions, robot_actions and outcome must be given together")),
    };

    let record = TrialRecord {
        meta: TrialMeta {
            trial_id,
            robot_platform: ann.robot,
            task: ann.task,
            participant_id: ann.participant_id,
            object_class: ann.object_class,
        },
        video,
        ft_raw,
        joint_states,
        annotations,
    };
    record.validate()?;
    Ok(record)
}

/// Load every trial directory (one containing `annotations.json`) under `root`,
/// in lexicographic order.
pub fn load_dataset(root: &Path) -> Result<Vec<TrialRecord>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join(ANNOTATION_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    dirs.iter().map(|d| load_trial(d)).collect()
}

fn require(dir: &Path, name: &'static str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::MissingStream { dir: dir.to_path_buf(), stream: name })
    }
}

fn load_video(dir: &Path) -> Result<VideoStream> {
    let ts_path = require(dir, FRAME_TIMESTAMPS)?;
    let mut rdr = csv::Reader::from_path(&ts_path).map_err(|e| Error::schema(&ts_path, e.to_string()))?;
    let timestamps = rdr
        .records()
        .map(|r| {
            let r = r.map_err(|e| Error::schema(&ts_path, e.to_string()))?;
            parse_f64(&ts_path, r.get(0).unwrap_or(""))
        })
        .collect::<Result<Vec<_>>>()?;

    let frames_dir = dir.join(FRAMES_DIR);
    let source = if frames_dir.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&frames_dir)
            .map_err(|e| Error::io(&frames_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        VideoSource::Frames(paths)
    } else if dir.join(VIDEO_FILE).is_file() {
        VideoSource::Container(dir.join(VIDEO_FILE))
    } else {
        return Err(Error::MissingStream { dir: dir.to_path_buf(), stream: "frames/ or video.mp4" });
    };
    Ok(VideoStream { timestamps, source })
}

fn load_ft(path: &Path) -> Result<FtStream> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::schema(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::schema(path, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::schema(path, format!("missing column `{name}`")))
    };
    let t_col = col("t")?;
    let cols = FT_COLUMNS.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;

    let mut out = FtStream::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::schema(path, e.to_string()))?;
        out.timestamps.push(parse_f64(path, rec.get(t_col).unwrap_or(""))?);
        let mut w = [0.0; 6];
        for (k, &c) in cols.iter().enumerate() {
            w[k] = parse_f64(path, rec.get(c).unwrap_or(""))?;
        }
        out.samples.push(w);
    }
    Ok(out)
}

fn load_joints(path: &Path) -> Result<JointStates> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::schema(path, e.to_string()))?;
    let headers: Vec<String> =
        rdr.headers().map_err(|e| Error::schema(path, e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::schema(path, format!("missing column `{name}`")))
    };
    let t_col = find("t")?;
    let gripper_col = find(GRIPPER_COLUMN)?;
    let arm_joints: Vec<String> =
        headers.iter().filter_map(|h| h.strip_suffix("_pos")).filter(|j| *j != "gripper").map(str::to_string).collect();
    let mut cols = Vec::with_capacity(arm_joints.len());
    for j in &arm_joints {
        cols.push([find(&format!("{j}_pos"))?, find(&format!("{j}_vel"))?, find(&format!("{j}_effort"))?]);
    }

    let mut js = JointStates { arm_joints, ..Default::default() };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::schema(path, e.to_string()))?;
        let get = |c: usize| parse_f64(path, rec.get(c).unwrap_or(""));
        js.timestamps.push(get(t_col)?);
        js.gripper_pos.push(get(gripper_col)?);
        let mut pos = Vec::with_capacity(cols.len());
        let mut vel = Vec::with_capacity(cols.len());
        let mut eff = Vec::with_capacity(cols.len());
        for c in &cols {
            pos.push(get(c[0])?);
            vel.push(get(c[1])?);
            eff.push(get(c[2])?);
        }
        js.position.push(pos);
        js.velocity.push(vel);
        js.effort.push(eff);
    }
    Ok(js)
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::schema(path, format!("not a number: `{s}`")))
}

/// Write a trial in the on-disk layout. Frames must be held in memory.
pub fn write_trial(root: &Path, trial: &TrialRecord) -> Result<PathBuf> {
    let dir = root.join(&trial.meta.trial_id);
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    match &trial.video.source {
        VideoSource::InMemory(frames) => {
            for (i, f) in frames.iter().enumerate() {
                f.save(frames_dir.join(format!("{i:06}.png")))?;
            }
        }
        _ => return Err(Error::ShapeError("write_trial requires in-memory frames".into())),
    }

    let mut rows = vec!["t".to_string()];
    rows.extend(trial.video.timestamps.iter().map(|t| t.to_string()));
    write_lines(&dir.join(FRAME_TIMESTAMPS), &rows)?;

    let mut rows = vec![format!("t,{}", FT_COLUMNS.join(","))];
    for (t, w) in trial.ft_raw.timestamps.iter().zip(&trial.ft_raw.samples) {
        rows.push(std::iter::once(*t).chain(w.iter().copied()).map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    }
    write_lines(&dir.join(FT_FILE), &rows)?;

    let js = &trial.joint_states;
    let mut header = vec!["t".to_string()];
    for j in &js.arm_joints {
        header.extend([format!("{j}_pos"), format!("{j}_vel"), format!("{j}_effort")]);
    }
    header.push(GRIPPER_COLUMN.to_string());
    let mut rows = vec![header.join(",")];
    for i in 0..js.timestamps.len() {
        let mut vals = vec![js.timestamps[i]];
        for k in 0..js.arm_joints.len() {
            vals.extend([js.position[i][k], js.velocity[i][k], js.effort[i][k]]);
        }
        vals.push(js.gripper_pos[i]);
        rows.push(vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    }
    write_lines(&dir.join(JOINTS_FILE), &rows)?;

    let ann = AnnotationFile {
        human_actions: trial.annotations.as_ref().map(|a| compress_track(&a.human_actions)),
        robot_actions: trial.annotations.as_ref().map(|a| compress_track(&a.robot_actions)),
        outcome: trial.annotations.as_ref().map(|a| a.outcome),
        task: trial.meta.task,
        robot: trial.meta.robot_platform,
        participant_id: trial.meta.participant_id.clone(),
        object_class: trial.meta.object_class.clone(),
    };
    let path = dir.join(ANNOTATION_FILE);
    fs::write(&path, serde_json::to_string_pretty(&ann)?).map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

fn write_lines(path: &Path, rows: &[String]) -> Result<()> {
    let mut s = rows.join("\n");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_json_shape() {
        let text = r#"{
            "human_actions": [[0, 2, "idle"], [3, 4, "interact"]],
            "robot_actions": [[0, 4, "transfer"]],
            "outcome": "success",
            "task": "r2h", "robot": "hsr",
            "participant_id": "p01", "object_class": "book"
        }"#;
        let a: AnnotationFile = serde_json::from_str(text).unwrap();
        assert_eq!(a.human_actions.unwrap()[1], (3, 4, HumanAction::Transfer));
        assert_eq!(a.robot, RobotPlatform::Hsr);
    }

    #[test]
    fn missing_ft_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let trial = dir.path().join("t0");
        fs::create_dir_all(&trial).unwrap();
        fs::write(
            trial.join(ANNOTATION_FILE),
            r#"{"task":"h2r","robot":"kinova_gen3","participant_id":"p","object_class":"cup"}"#,
        )
        .unwrap();
        fs::write(trial.join(FRAME_TIMESTAMPS), "t\n0\n").unwrap();
        fs::write(trial.join(VIDEO_FILE), b"").unwrap();
        let err = load_trial(&trial).unwrap_err();
        assert!(matches!(err, Error::MissingStream { stream: "ft.csv", .. }), "{err}");
    }
}
