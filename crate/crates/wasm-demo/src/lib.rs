//! Three interactive operations exposed to the browser page in `www/`.
//! Every export takes and returns plain numbers, strings and JSON so the
//! page needs no bindings beyond what `wasm-bindgen --target web` emits.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use hfd_core::dataset::{extract_robot_actions, MotionParams};
use hfd_core::labels::{HumanAction, OutcomeLabel, RobotPlatform, Task};
use hfd_core::metrics::{f1_from_counts, frame_accuracy, frames_to_segments, segment_counts};
use hfd_core::nn::seeded_rng;
use hfd_core::synthetic::{generate_trial, ScenarioScript};

pub const THRESHOLDS: [u32; 3] = [10, 25, 50];

#[derive(Debug, Serialize)]
pub struct TrialView {
    pub trial_id: String,
    pub outcome: String,
    pub frames: usize,
    pub fps: f64,
    pub human_vocabulary: Vec<&'static str>,
    /// Indices into `human_vocabulary`.
    pub human: Vec<usize>,
    pub robot: Vec<String>,
    pub gripper: Vec<f64>,
    pub fx: Vec<f64>,
    pub fz: Vec<f64>,
    pub arm_speed: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct F1View {
    pub thresholds: [u32; 3],
    pub f1: [f64; 3],
    /// (tp, fp, fn) per threshold.
    pub counts: [(usize, usize, usize); 3],
    pub frame_accuracy: f64,
    pub pred_segments: usize,
    pub gt_segments: usize,
}

#[derive(Debug, Serialize)]
pub struct RobotView {
    pub track: Vec<String>,
    pub segments: Vec<(usize, usize, String)>,
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

pub fn synth_trial_view(platform: &str, task: &str, outcome: &str, seed: u64) -> Result<TrialView, String> {
    let mut script = ScenarioScript::new(parse::<Task>(task)?, parse::<OutcomeLabel>(outcome)?, seed);
    script.platform = parse::<RobotPlatform>(platform)?;
    script = script.with_random_durations(&mut seeded_rng(seed));
    let trial = generate_trial(&script).map_err(|e| e.to_string())?;
    let al = &trial.aligned;
    let labels = al.labels.as_ref().expect("synthetic trials are labelled");
    Ok(TrialView {
        trial_id: al.meta.trial_id.clone(),
        outcome: labels.outcome.to_string(),
        frames: al.len(),
        fps: hfd_core::synthetic::FRAME_RATE,
        human_vocabulary: HumanAction::vocabulary(),
        human: labels.human_actions.iter().map(|a| a.index()).collect(),
        robot: labels.robot_actions.iter().map(|a| a.to_string()).collect(),
        gripper: al.gripper.clone(),
        fx: al.ft.iter().map(|w| w[0]).collect(),
        fz: al.ft.iter().map(|w| w[2]).collect(),
        arm_speed: al.arm_speed.clone(),
    })
}

pub fn f1_view(pred: &[usize], gt: &[usize]) -> Result<F1View, String> {
    let p = frames_to_segments(pred).map_err(|e| e.to_string())?;
    let g = frames_to_segments(gt).map_err(|e| e.to_string())?;
    let mut counts = [(0, 0, 0); 3];
    for (c, t) in counts.iter_mut().zip(THRESHOLDS) {
        *c = segment_counts(&p, &g, t as f64 / 100.0).map_err(|e| e.to_string())?;
    }
    Ok(F1View {
        thresholds: THRESHOLDS,
        f1: counts.map(|(tp, fp, fn_)| f1_from_counts(tp, fp, fn_)),
        counts,
        frame_accuracy: frame_accuracy(pred, gt).map_err(|e| e.to_string())?,
        pred_segments: p.segments.len(),
        gt_segments: g.segments.len(),
    })
}

pub fn robot_view(arm_speed: &[f64], v_min: f64, hysteresis: usize) -> Result<RobotView, String> {
    let track = extract_robot_actions(arm_speed, MotionParams { v_min, hysteresis }).map_err(|e| e.to_string())?;
    let segments =
        hfd_core::dataset::compress_track(&track).into_iter().map(|(s, e, l)| (s, e, l.to_string())).collect();
    Ok(RobotView { track: track.iter().map(|a| a.to_string()).collect(), segments })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e)).and_then(|v| serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string())))
}

/// Generate one synthetic trial and return its tracks as JSON.
#[wasm_bindgen]
pub fn synth_trial(platform: &str, task: &str, outcome: &str, seed: u32) -> Result<String, JsError> {
    to_js(synth_trial_view(platform, task, outcome, seed as u64))
}

/// Segmental F1 at 10/25/50 % overlap plus frame accuracy, as JSON.
#[wasm_bindgen]
pub fn segmental_f1(pred: Vec<u32>, gt: Vec<u32>) -> Result<String, JsError> {
    let to = |v: Vec<u32>| v.into_iter().map(|x| x as usize).collect::<Vec<_>>();
    to_js(f1_view(&to(pred), &to(gt)))
}

/// Robot approach/transfer/retract track from arm speed, as JSON.
#[wasm_bindgen]
pub fn robot_actions(arm_speed: Vec<f64>, v_min: f64, hysteresis: u32) -> Result<String, JsError> {
    to_js(robot_view(&arm_speed, v_min, hysteresis as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_view_is_consistent() {
        let v = synth_trial_view("kinova_gen3", "h2r", "no_release", 4).unwrap();
        assert_eq!(v.outcome, "no_release");
        for len in [v.human.len(), v.robot.len(), v.gripper.len(), v.fx.len(), v.fz.len(), v.arm_speed.len()] {
            assert_eq!(len, v.frames);
        }
        assert!(v.human.iter().any(|&h| v.human_vocabulary[h] == "not_released"));
        assert!(synth_trial_view("hsr", "h2r", "no_grasp", 1).is_err());
        assert!(synth_trial_view("mars_rover", "r2h", "success", 1).is_err());
    }

    #[test]
    fn f1_of_identical_tracks_is_perfect() {
        let gt = [0, 0, 1, 1, 1, 2, 2, 0];
        let v = f1_view(&gt, &gt).unwrap();
        assert_eq!(v.f1, [100.0; 3]);
        assert_eq!(v.frame_accuracy, 100.0);
        assert_eq!(v.gt_segments, 4);
        // One flicker adds two false positives and splits a segment.
        let mut pred = gt;
        pred[3] = 0;
        let v = f1_view(&pred, &gt).unwrap();
        assert!(v.f1[0] < 100.0);
        assert!(f1_view(&pred[..4], &gt).is_err());
    }

    #[test]
    fn synthetic_arm_speed_recovers_robot_track() {
        let v = synth_trial_view("hsr", "r2h", "success", 2).unwrap();
        let r = robot_view(&v.arm_speed, 0.01, 5).unwrap();
        assert_eq!(r.track.len(), v.frames);
        let labels: Vec<&str> = r.segments.iter().map(|s| s.2.as_str()).collect();
        assert!(labels.contains(&"approach") && labels.contains(&"retract"), "{labels:?}");
        assert!(robot_view(&vec![0.0; 30], 0.01, 5).is_err());
    }
}
