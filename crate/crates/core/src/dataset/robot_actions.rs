use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::RobotActionFull;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Mean absolute arm-joint velocity (rad/s) above which the arm is moving.
    pub v_min: f64,
    /// Frames a new state must persist before the switch is accepted.
    pub hysteresis: usize,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams { v_min: 0.01, hysteresis: 5 }
    }
}

/// Motion episodes as inclusive frame ranges.
fn motion_episodes(speed: &[f64], params: MotionParams) -> Vec<(usize, usize)> {
    let h = params.hysteresis.max(1);
    let mut moving = false;
    let mut run = 0;
    let mut start = 0;
    let mut episodes = Vec::new();
    for (t, &v) in speed.iter().enumerate() {
        if (v > params.v_min) != moving {
            run += 1;
            if run >= h {
                let switch_at = t + 1 - h;
                if moving {
                    episodes.push((start, switch_at - 1));
                } else {
                    start = switch_at;
                }
                moving = !moving;
                run = 0;
            }
        } else {
            run = 0;
        }
    }
    if moving {
        episodes.push((start, speed.len() - 1));
    }
    episodes
}

/// Label each frame with a robot phase from the arm speed profile.
///
/// The first motion episode is the approach and the last is the retract;
/// everything between them is transfer. Leading and trailing still frames are
/// idle and post-idle.
pub fn extract_robot_actions(arm_speed: &[f64], params: MotionParams) -> Result<Vec<RobotActionFull>> {
    let episodes = motion_episodes(arm_speed, params);
    if episodes.len() < 2 {
        return Err(Error::SegmentationAmbiguous(format!(
            "{} motion episode(s) detected, need at least 2",
            episodes.len()
        )));
    }
    let (a_start, a_end) = episodes[0];
    let (r_start, r_end) = episodes[episodes.len() - 1];
    let track = (0..arm_speed.len())
        .map(|t| {
            if t < a_start {
                RobotActionFull::Idle
            } else if t <= a_end {
                RobotActionFull::Approach
            } else if t < r_start {
                RobotActionFull::Transfer
            } else if t <= r_end {
                RobotActionFull::Retract
            } else {
                RobotActionFull::PostIdle
            }
        })
        .collect();
    Ok(track)
}
