use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::RobotPlatform;

/// Discrete gripper states: open, partially closed, closed.
pub const GRIPPER_LEVELS: [f64; 3] = [-0.5, 0.0, 0.5];

/// Joint positions of the fully closed and fully open gripper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperCalibration {
    pub closed: f64,
    pub open: f64,
}

impl GripperCalibration {
    /// Opening ratio in [0, 1], 1 = fully open.
    pub fn opening_ratio(&self, position: f64) -> f64 {
        ((position - self.closed) / (self.open - self.closed)).clamp(0.0, 1.0)
    }

    pub fn position_for_ratio(&self, ratio: f64) -> f64 {
        self.closed + ratio * (self.open - self.closed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperCalibrations(pub BTreeMap<RobotPlatform, GripperCalibration>);

impl Default for GripperCalibrations {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        // HSR hand motor joint (rad) and Robotiq 2F-85 finger joint (rad).
        m.insert(RobotPlatform::Hsr, GripperCalibration { closed: -0.05, open: 1.2 });
        m.insert(RobotPlatform::KinovaGen3, GripperCalibration { closed: 0.8, open: 0.0 });
        GripperCalibrations(m)
    }
}

impl GripperCalibrations {
    pub fn get(&self, platform: RobotPlatform) -> Result<&GripperCalibration> {
        self.0.get(&platform).ok_or_else(|| Error::UnknownPlatform(platform.to_string()))
    }
}

/// Map an opening ratio onto {-0.5, 0.0, 0.5}.
pub fn discretize_ratio(r: f64) -> f64 {
    if r <= 0.25 {
        0.5
    } else if r >= 0.75 {
        -0.5
    } else {
        0.0
    }
}

pub fn discretize_gripper(position: f64, platform: RobotPlatform, calib: &GripperCalibrations) -> Result<f64> {
    Ok(discretize_ratio(calib.get(platform)?.opening_ratio(position)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extremes_and_midpoint() {
        let c = GripperCalibrations::default();
        for p in [RobotPlatform::Hsr, RobotPlatform::KinovaGen3] {
            let cal = *c.get(p).unwrap();
            assert_eq!(discretize_gripper(cal.open, p, &c).unwrap(), -0.5);
            assert_eq!(discretize_gripper(cal.closed, p, &c).unwrap(), 0.5);
            assert_eq!(discretize_gripper(cal.position_for_ratio(0.5), p, &c).unwrap(), 0.0);
        }
    }

    #[test]
    fn unknown_platform() {
        let mut c = GripperCalibrations::default();
        c.0.remove(&RobotPlatform::KinovaGen3);
        assert!(matches!(discretize_gripper(0.1, RobotPlatform::KinovaGen3, &c), Err(Error::UnknownPlatform(_))));
    }

    proptest! {
        #[test]
        fn total_and_monotone(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let ga = discretize_ratio(lo);
            let gb = discretize_ratio(hi);
            prop_assert!(GRIPPER_LEVELS.contains(&ga));
            prop_assert!(gb <= ga);
        }
    }
}
