use super::{discretize_gripper, AlignedTrial, GripperCalibrations, TrialRecord};
use crate::error::{Error, Result};

/// Index of the sample nearest to `t`; ties go to the earlier sample.
/// `ts` must be non-empty and sorted.
pub fn nearest_index(ts: &[f64], t: f64) -> usize {
    let upper = ts.partition_point(|&x| x < t);
    if upper == 0 {
        return 0;
    }
    if upper == ts.len() {
        return ts.len() - 1;
    }
    let lower = upper - 1;
    if t - ts[lower] <= ts[upper] - t {
        lower
    } else {
        upper
    }
}

fn covers_any(ts: &[f64], frames: &[f64]) -> bool {
    match (ts.first(), ts.last()) {
        (Some(&lo), Some(&hi)) => frames.iter().any(|&t| t >= lo && t <= hi),
        _ => false,
    }
}

/// Resample F-T, gripper and arm speed onto the video frame timestamps by
/// nearest-sample hold.
pub fn align_to_frames(trial: &TrialRecord, calibration: &GripperCalibrations) -> Result<AlignedTrial> {
    let frames = &trial.video.timestamps;
    if frames.is_empty() {
        return Err(Error::EmptyTrial);
    }
    if !covers_any(&trial.ft_raw.timestamps, frames) {
        return Err(Error::EmptyOverlap("ft"));
    }
    let js = &trial.joint_states;
    if !covers_any(&js.timestamps, frames) {
        return Err(Error::EmptyOverlap("joints"));
    }

    let speed = js.arm_speed();
    let platform = trial.meta.robot_platform;
    let mut ft = Vec::with_capacity(frames.len());
    let mut gripper = Vec::with_capacity(frames.len());
    let mut arm_speed = Vec::with_capacity(frames.len());
    for &t in frames {
        ft.push(trial.ft_raw.samples[nearest_index(&trial.ft_raw.timestamps, t)]);
        let j = nearest_index(&js.timestamps, t);
        gripper.push(discretize_gripper(js.gripper_pos[j], platform, calibration)?);
        arm_speed.push(speed[j]);
    }

    Ok(AlignedTrial {
        meta: trial.meta.clone(),
        frames: trial.video.clone(),
        ft,
        gripper,
        arm_speed,
        labels: trial.annotations.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_ties_go_to_earlier() {
        let ts = [0.0, 1.0, 2.0];
        assert_eq!(nearest_index(&ts, 0.5), 0);
        assert_eq!(nearest_index(&ts, 1.5), 1);
        assert_eq!(nearest_index(&ts, 1.6), 2);
        assert_eq!(nearest_index(&ts, -3.0), 0);
        assert_eq!(nearest_index(&ts, 9.0), 2);
        assert_eq!(nearest_index(&ts, 2.0), 2);
    }
}
