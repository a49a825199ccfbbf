//! Procedural handover trials with ground-truth labels.
//!
//! A script fixes the five robot phase durations and the outcome. The human
//! timeline, the wrist wrench, the gripper and the arm motion follow from the
//! outcome by rule, so every failure mode leaves its own sensor signature.
//! Video features are replaced by a pseudo-backbone: a class-conditioned
//! Gaussian latent embedded into the backbone width by a fixed projection.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    align_to_frames, write_trial, AlignedTrial, AnnotationTrack, FtStream, GripperCalibrations, JointStates, SplitSet,
    SplitSpec, TrialMeta, TrialRecord, VideoStream, Wrench,
};
use crate::error::{Error, Result};
use crate::features::{write_features, FeatureSequence, BACKBONE_WIDTH};
use crate::labels::{HumanAction, OutcomeLabel, RobotActionFull, RobotPlatform, Task};
use crate::nn::{seeded_rng, Rng64};

pub const FRAME_RATE: f64 = 10.0;
/// Sensor samples per video frame. Every frame timestamp coincides with a sample.
pub const FT_PER_FRAME: usize = 3;
pub const JOINTS_PER_FRAME: usize = 2;
pub const FRAME_WIDTH: u32 = 32;
pub const FRAME_HEIGHT: u32 = 24;
pub const PSEUDO_BACKBONE_VERSION: &str = "synthetic-v1";
pub const LATENT_DIM: usize = 16;
const PROJECTION_SEED: u64 = 0x5eed_f00d;
const HUMAN_SCALE: f64 = 3.0;
const ROBOT_SCALE: f64 = 1.5;
const LATENT_NOISE: f64 = 0.5;
/// Arm speed while moving and its still-phase ceiling; both far from the
/// default motion threshold.
const ARM_SPEED: f64 = 0.2;
const STILL_NOISE: f64 = 0.001;
pub const SPLIT_FILE: &str = "split.json";
pub const CACHE_DIR: &str = "cache";

/// Ranges for randomized robot phase durations, in frames (inclusive).
pub const DURATION_RANGES: [(usize, usize); 5] = [(5, 10), (15, 25), (10, 20), (15, 25), (5, 10)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    /// Contact force while the object changes hands (N).
    pub transfer_force: f64,
    /// Pull on the robot while the human refuses to release (N).
    pub sustained_pull: f64,
    /// Impulse when the object is dropped (N).
    pub drop_spike: f64,
    /// Object weight carried by the gripper (N).
    pub object_weight: f64,
}

impl Default for Signature {
    fn default() -> Self {
        Signature { transfer_force: 5.0, sustained_pull: 8.0, drop_spike: 10.0, object_weight: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub trial_id: String,
    pub platform: RobotPlatform,
    pub task: Task,
    pub outcome: OutcomeLabel,
    pub participant_id: String,
    pub object_class: String,
    /// Frames of idle, approach, transfer, retract, post-idle.
    pub durations: [usize; 5],
    pub signature: Signature,
    /// Gaussian noise σ as a fraction of the transfer force.
    pub noise: f64,
    pub seed: u64,
}

impl ScenarioScript {
    pub fn new(task: Task, outcome: OutcomeLabel, seed: u64) -> Self {
        ScenarioScript {
            trial_id: format!("{task}_{outcome}_{seed}"),
            platform: RobotPlatform::Hsr,
            task,
            outcome,
            participant_id: "p00".into(),
            object_class: "object_00".into(),
            durations: [8, 20, 14, 20, 8],
            signature: Signature::default(),
            noise: 0.05,
            seed,
        }
    }

    /// Durations drawn uniformly from [`DURATION_RANGES`].
    pub fn with_random_durations(mut self, rng: &mut impl Rng) -> Self {
        self.durations = DURATION_RANGES.map(|(lo, hi)| rng.gen_range(lo..=hi));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.durations.iter().position(|&d| d == 0) {
            return Err(Error::ScriptError(format!("robot phase {} has zero duration", RobotActionFull::ALL[k])));
        }
        if self.durations[2] < 2 {
            return Err(Error::ScriptError("transfer must last at least 2 frames".into()));
        }
        if !self.outcome.valid_for(self.task) {
            return Err(Error::ScriptError(format!("outcome {} is impossible for task {}", self.outcome, self.task)));
        }
        let s = &self.signature;
        let amps = [s.transfer_force, s.sustained_pull, s.drop_spike, s.object_weight, self.noise];
        if amps.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::ScriptError("amplitudes and noise must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.durations.iter().sum()
    }

    /// Frame boundaries `[0, b1, b2, b3, b4, T]` of the robot phases.
    pub fn boundaries(&self) -> [usize; 6] {
        let mut b = [0; 6];
        for k in 0..5 {
            b[k + 1] = b[k] + self.durations[k];
        }
        b
    }

    /// Frame at which the object changes grip, inside robot transfer.
    pub fn handover_frame(&self) -> usize {
        let b = self.boundaries();
        b[2] + self.durations[2] / 2
    }

    fn human_approach_start(&self) -> usize {
        let b = self.boundaries();
        b[1] + self.durations[1] / 3
    }
}

/// Noise-free per-frame ground truth implied by a script.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedTracks {
    pub human: Vec<HumanAction>,
    pub robot: Vec<RobotActionFull>,
    pub gripper: Vec<f64>,
    pub wrench: Vec<Wrench>,
    pub moving: Vec<bool>,
}

pub fn scripted_tracks(script: &ScenarioScript) -> Result<ScriptedTracks> {
    use HumanAction as H;
    use OutcomeLabel as O;

    script.validate()?;
    let t_len = script.frames();
    let b = script.boundaries();
    let g = script.handover_frame();
    let h0 = script.human_approach_start();
    let sig = script.signature;

    let robot: Vec<RobotActionFull> =
        (0..t_len).map(|t| RobotActionFull::ALL[b.iter().rposition(|&x| x <= t).expect("b[0] = 0").min(4)]).collect();

    let phase = |t: usize, spans: &[(usize, H)]| -> H {
        spans.iter().rev().find(|(start, _)| *start <= t).map(|s| s.1).unwrap_or(H::Idle)
    };
    let spans: Vec<(usize, H)> = match script.outcome {
        O::Success => {
            vec![(0, H::Idle), (h0, H::Approach), (b[2], H::Transfer), (b[3], H::Retract), (b[4], H::PostIdle)]
        }
        O::NoApproach => vec![(0, H::Idle)],
        O::NoGrasp => vec![(0, H::Idle), (h0, H::Approach), (b[2], H::Retract), (b[3], H::PostIdle)],
        O::Drop => vec![(0, H::Idle), (h0, H::Approach), (b[2], H::Transfer), (g + 1, H::Dropped)],
        O::NoRelease => {
            vec![(0, H::Idle), (h0, H::Approach), (b[2], H::Transfer), (g, H::NotReleased), (b[4], H::PostIdle)]
        }
    };
    let human: Vec<H> = (0..t_len).map(|t| phase(t, &spans)).collect();

    const OPEN: f64 = -0.5;
    const CLOSED: f64 = 0.5;
    let gripper: Vec<f64> = (0..t_len)
        .map(|t| match (script.task, script.outcome) {
            (Task::R2H, O::Success | O::Drop) => {
                if t < g {
                    CLOSED
                } else {
                    OPEN
                }
            }
            (Task::R2H, _) => CLOSED,
            (Task::H2R, O::NoApproach) => OPEN,
            (Task::H2R, O::NoRelease) => {
                if t >= g && t < b[3] {
                    CLOSED
                } else {
                    OPEN
                }
            }
            (Task::H2R, _) => {
                if t < g {
                    OPEN
                } else {
                    CLOSED
                }
            }
        })
        .collect();

    let wrench = (0..t_len)
        .map(|t| {
            let carrying = match (script.task, script.outcome) {
                (Task::R2H, O::Success) => t < g,
                (Task::R2H, O::Drop) => t < g,
                (Task::R2H, _) => true,
                (Task::H2R, O::Success) => t >= g,
                (Task::H2R, O::Drop) => t == g,
                (Task::H2R, _) => false,
            };
            let mut fx = match human[t] {
                H::Transfer => sig.transfer_force,
                H::NotReleased if t < b[3] => sig.sustained_pull,
                _ => 0.0,
            };
            if script.outcome == O::Drop && t == g + 1 {
                fx += sig.drop_spike;
            }
            let fz = if carrying { -sig.object_weight } else { 0.0 };
            [fx, 0.0, fz, -0.08 * fz, 0.08 * fx, 0.0]
        })
        .collect();

    let moving = robot.iter().map(|a| matches!(a, RobotActionFull::Approach | RobotActionFull::Retract)).collect();
    Ok(ScriptedTracks { human, robot, gripper, wrench, moving })
}

fn gauss(rng: &mut Rng64) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

fn arm_joints(platform: RobotPlatform) -> Vec<String> {
    match platform {
        RobotPlatform::Hsr => {
            ["arm_lift", "arm_flex", "arm_roll", "wrist_flex", "wrist_roll"].iter().map(|s| s.to_string()).collect()
        }
        RobotPlatform::KinovaGen3 => (1..=7).map(|k| format!("joint_{k}")).collect(),
    }
}

/// Fixed projection from the latent space to the backbone width.
pub fn pseudo_projection() -> Array2<f64> {
    let mut rng = seeded_rng(PROJECTION_SEED);
    let scale = 1.0 / (LATENT_DIM as f64).sqrt();
    Array2::from_shape_simple_fn((LATENT_DIM, BACKBONE_WIDTH), || scale * gauss(&mut rng))
}

fn render_frame(human: HumanAction, robot: RobotActionFull, progress: f64, gripper: f64) -> RgbImage {
    let mut img = RgbImage::from_pixel(FRAME_WIDTH, FRAME_HEIGHT, Rgb([40, 40, 40]));
    let mut square = |x: u32, y: u32, c: [u8; 3]| {
        for dy in 0..4 {
            for dx in 0..4 {
                if x + dx < FRAME_WIDTH && y + dy < FRAME_HEIGHT {
                    img.put_pixel(x + dx, y + dy, Rgb(c));
                }
            }
        }
    };
    let robot_x = match robot {
        RobotActionFull::Idle => 2.0,
        RobotActionFull::Approach => 2.0 + 10.0 * progress,
        RobotActionFull::Transfer => 12.0,
        RobotActionFull::Retract => 12.0 - 10.0 * progress,
        RobotActionFull::PostIdle => 2.0,
    };
    let (human_x, human_y, colour) = match human {
        HumanAction::Idle => (26.0, 10, [200, 160, 120]),
        HumanAction::Approach => (26.0 - 8.0 * progress, 10, [220, 140, 100]),
        HumanAction::Transfer => (18.0, 10, [240, 120, 80]),
        HumanAction::Retract => (18.0 + 8.0 * progress, 10, [200, 180, 140]),
        HumanAction::PostIdle => (26.0, 10, [180, 180, 180]),
        HumanAction::NotReleased => (18.0, 10, [250, 60, 60]),
        HumanAction::Dropped => (20.0, 10, [120, 200, 120]),
    };
    square(robot_x as u32, 10, [70, 90, 220]);
    square(human_x as u32, human_y, colour);
    let obj_y = if human == HumanAction::Dropped { 19 } else { 4 };
    let obj_x = if gripper > 0.0 { robot_x as u32 + 2 } else { human_x as u32 };
    square(obj_x, obj_y, [230, 220, 60]);
    img
}

/// Everything generated for one script.
#[derive(Debug, Clone)]
pub struct SyntheticTrial {
    pub script: ScenarioScript,
    pub record: TrialRecord,
    pub aligned: AlignedTrial,
    pub features: FeatureSequence,
}

pub fn generate_trial(script: &ScenarioScript) -> Result<SyntheticTrial> {
    generate_with_projection(script, &pseudo_projection())
}

fn generate_with_projection(script: &ScenarioScript, projection: &Array2<f64>) -> Result<SyntheticTrial> {
    let tracks = scripted_tracks(script)?;
    let t_len = script.frames();
    let mut rng = seeded_rng(script.seed);
    let sigma = script.noise * script.signature.transfer_force;

    let meta = TrialMeta {
        trial_id: script.trial_id.clone(),
        robot_platform: script.platform,
        task: script.task,
        participant_id: script.participant_id.clone(),
        object_class: script.object_class.clone(),
    };

    // phase progress in [0, 1] for frame rendering
    let b = script.boundaries();
    let human_runs = crate::dataset::compress_track(&tracks.human);
    let progress = |t: usize, runs: &[(usize, usize, usize)]| -> f64 {
        let &(s, e, _) = runs.iter().find(|r| r.0 <= t && t <= r.1).expect("runs cover the track");
        if e == s {
            1.0
        } else {
            (t - s) as f64 / (e - s) as f64
        }
    };
    let robot_runs: Vec<(usize, usize, usize)> = (0..5).map(|k| (b[k], b[k + 1] - 1, k)).collect();
    let human_idx: Vec<(usize, usize, usize)> = human_runs.iter().map(|r| (r.0, r.1, r.2.index())).collect();
    let frames: Vec<RgbImage> = (0..t_len)
        .map(|t| {
            let p = progress(t, &human_idx).max(progress(t, &robot_runs));
            render_frame(tracks.human[t], tracks.robot[t], p, tracks.gripper[t])
        })
        .collect();
    let video = VideoStream::in_memory((0..t_len).map(|i| i as f64 / FRAME_RATE).collect(), frames);

    let n_ft = t_len * FT_PER_FRAME;
    let ft_rate = FRAME_RATE * FT_PER_FRAME as f64;
    let mut ft_raw = FtStream { timestamps: Vec::with_capacity(n_ft), samples: Vec::with_capacity(n_ft) };
    for k in 0..n_ft {
        let w = tracks.wrench[k / FT_PER_FRAME];
        ft_raw.timestamps.push(k as f64 / ft_rate);
        ft_raw.samples.push(std::array::from_fn(|c| w[c] + sigma * gauss(&mut rng)));
    }

    let calib = GripperCalibrations::default().get(script.platform)?.to_owned();
    let names = arm_joints(script.platform);
    let n_js = t_len * JOINTS_PER_FRAME;
    let js_rate = FRAME_RATE * JOINTS_PER_FRAME as f64;
    let mut joints = JointStates { arm_joints: names.clone(), ..Default::default() };
    let mut pos = vec![0.0; names.len()];
    for k in 0..n_js {
        let f = k / JOINTS_PER_FRAME;
        let vel: Vec<f64> = (0..names.len())
            .map(|j| {
                let sign = if tracks.robot[f] == RobotActionFull::Retract { -1.0 } else { 1.0 };
                if tracks.moving[f] {
                    sign * ARM_SPEED * (1.0 + 0.1 * j as f64) + 0.002 * gauss(&mut rng)
                } else {
                    STILL_NOISE * (2.0 * rng.gen::<f64>() - 1.0)
                }
            })
            .collect();
        pos.iter_mut().zip(&vel).for_each(|(p, v)| *p += v / js_rate);
        let ratio = if tracks.gripper[f] > 0.0 { 0.0 } else { 1.0 };
        joints.timestamps.push(k as f64 / js_rate);
        joints.effort.push(vel.iter().map(|v| 0.5 * v).collect());
        joints.position.push(pos.clone());
        joints.velocity.push(vel);
        joints.gripper_pos.push(calib.position_for_ratio(ratio));
    }

    let annotations = AnnotationTrack {
        human_actions: tracks.human.clone(),
        robot_actions: tracks.robot.clone(),
        outcome: script.outcome,
    };
    let record = TrialRecord { meta, video, ft_raw, joint_states: joints, annotations: Some(annotations) };
    record.validate()?;
    let aligned = align_to_frames(&record, &GripperCalibrations::default())?;
    aligned.validate()?;

    let mut latent = Array2::zeros((t_len, LATENT_DIM));
    for t in 0..t_len {
        let mut row = latent.row_mut(t);
        row.iter_mut().for_each(|v| *v = LATENT_NOISE * gauss(&mut rng));
        row[tracks.human[t].index()] += HUMAN_SCALE;
        row[HumanAction::COUNT + tracks.robot[t].to_model().index()] += ROBOT_SCALE;
    }
    let features = FeatureSequence::from_aligned(&aligned, latent.dot(projection), PSEUDO_BACKBONE_VERSION.into());
    Ok(SyntheticTrial { script: script.clone(), record, aligned, features })
}

/// One (platform, task, outcome) cell of a suite. `platform = None` alternates
/// platforms across the cell's trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub platform: Option<RobotPlatform>,
    pub task: Task,
    pub outcome: OutcomeLabel,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub cells: Vec<SuiteCell>,
    /// Participants in the train, val and test sets.
    pub participants: [usize; 3],
    /// Relative sizes of the train, val and test sets, in trials.
    pub split_weights: [usize; 3],
    pub objects: usize,
    pub signature: Signature,
    pub noise: f64,
    pub seed: u64,
}

/// Trial split proportions of the real dataset (train/val/test).
pub const DATASET_SPLIT: [usize; 3] = [337, 101, 151];

/// Trials per (platform, task, outcome) in the real dataset, outcomes in
/// [`OutcomeLabel::for_task`] order.
pub const DATASET_COUNTS: [(RobotPlatform, Task, [usize; 4]); 4] = [
    (RobotPlatform::Hsr, Task::R2H, [68, 50, 49, 58]),
    (RobotPlatform::Hsr, Task::H2R, [51, 46, 57, 66]),
    (RobotPlatform::KinovaGen3, Task::R2H, [18, 17, 17, 20]),
    (RobotPlatform::KinovaGen3, Task::H2R, [19, 18, 17, 18]),
];

impl SuiteConfig {
    /// `n` trials for each of the 8 (task, outcome) cells.
    pub fn balanced(n: usize, seed: u64) -> Self {
        let cells = [Task::R2H, Task::H2R]
            .iter()
            .flat_map(|&task| {
                OutcomeLabel::for_task(task).map(|outcome| SuiteCell { platform: None, task, outcome, count: n })
            })
            .collect();
        SuiteConfig {
            cells,
            participants: [4, 1, 2],
            split_weights: DATASET_SPLIT,
            objects: 22,
            signature: Signature::default(),
            noise: 0.05,
            seed,
        }
    }

    /// `total` trials spread as evenly as possible over the 8 cells, earlier
    /// cells taking the remainder.
    pub fn balanced_total(total: usize, seed: u64) -> Self {
        let mut config = Self::balanced(total / 8, seed);
        for cell in config.cells.iter_mut().take(total % 8) {
            cell.count += 1;
        }
        config
    }

    /// Same cell counts, participants and split sizes as the real dataset.
    pub fn dataset_shaped(seed: u64) -> Self {
        let cells = DATASET_COUNTS
            .iter()
            .flat_map(|&(platform, task, counts)| {
                OutcomeLabel::for_task(task).into_iter().zip(counts).map(move |(outcome, count)| SuiteCell {
                    platform: Some(platform),
                    task,
                    outcome,
                    count,
                })
            })
            .collect();
        SuiteConfig { participants: [10, 3, 4], ..Self::balanced(0, seed) }.with_cells(cells)
    }

    pub fn with_cells(mut self, cells: Vec<SuiteCell>) -> Self {
        self.cells = cells;
        self
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(|c| c.count).sum()
    }

    /// Trial counts of the train, val and test sets.
    pub fn split_sizes(&self) -> [usize; 3] {
        let n = self.total();
        let w: usize = self.split_weights.iter().sum();
        let train = (n * self.split_weights[0] + w / 2) / w;
        let val = ((n * self.split_weights[1] + w / 2) / w).min(n - train);
        [train, val, n - train - val]
    }
}

/// Scripts and participant split of a suite, without generating signals.
pub fn plan_suite(config: &SuiteConfig) -> Result<(Vec<ScenarioScript>, SplitSpec)> {
    if config.total() == 0 {
        return Err(Error::ScriptError("suite has no trials".into()));
    }
    if config.participants.contains(&0) || config.objects == 0 {
        return Err(Error::ScriptError("every split needs at least one participant and one object".into()));
    }
    let mut rng = seeded_rng(config.seed);
    let mut scripts = Vec::with_capacity(config.total());
    let mut k = 0usize;
    for cell in &config.cells {
        for i in 0..cell.count {
            let platform = cell.platform.unwrap_or(if k.is_multiple_of(2) {
                RobotPlatform::Hsr
            } else {
                RobotPlatform::KinovaGen3
            });
            let mut script = ScenarioScript::new(cell.task, cell.outcome, rng.gen()).with_random_durations(&mut rng);
            script.trial_id = format!("{platform}_{}_{}_{i:03}", cell.task, cell.outcome);
            script.platform = platform;
            script.object_class = format!("object_{:02}", rng.gen_range(0..config.objects));
            script.signature = config.signature;
            script.noise = config.noise;
            script.validate()?;
            scripts.push(script);
            k += 1;
        }
    }

    // a seeded permutation decides which trials land in which set
    let mut order: Vec<usize> = (0..scripts.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let sizes = config.split_sizes();
    let sets = [SplitSet::Train, SplitSet::Val, SplitSet::Test];
    let mut spec = SplitSpec::default();
    let mut pid = 0;
    let mut cursor = 0;
    for s in 0..3 {
        let ids: Vec<String> = (0..config.participants[s]).map(|j| format!("p{:02}", pid + j + 1)).collect();
        pid += ids.len();
        for id in &ids {
            spec.assign(id, sets[s])?;
        }
        for (j, &trial) in order[cursor..cursor + sizes[s]].iter().enumerate() {
            scripts[trial].participant_id = ids[j % ids.len()].clone();
        }
        cursor += sizes[s];
    }
    Ok((scripts, spec))
}

/// Generate a suite in memory. Use [`write_suite`] for large suites.
pub fn generate_suite(config: &SuiteConfig) -> Result<(Vec<SyntheticTrial>, SplitSpec)> {
    let (scripts, spec) = plan_suite(config)?;
    let projection = pseudo_projection();
    let trials = scripts.iter().map(|s| generate_with_projection(s, &projection)).collect::<Result<_>>()?;
    Ok((trials, spec))
}

/// Where [`write_suite`] put things.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteLayout {
    pub dataset_root: PathBuf,
    pub split_path: PathBuf,
    pub cache_root: PathBuf,
    pub trials: usize,
}

/// Write trials in the dataset layout under `root`, the split as
/// `root/split.json` and pseudo-backbone features under `root/cache`.
/// Trials are generated in parallel; output does not depend on thread count.
pub fn write_suite(config: &SuiteConfig, root: &Path) -> Result<SuiteLayout> {
    let (scripts, spec) = plan_suite(config)?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let cache_root = root.join(CACHE_DIR);
    let projection = pseudo_projection();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(scripts.len());
    let chunk = scripts.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = scripts
            .chunks(chunk)
            .map(|part| {
                let (projection, cache_root) = (&projection, &cache_root);
                scope.spawn(move || -> Result<()> {
                    for script in part {
                        let trial = generate_with_projection(script, projection)?;
                        write_trial(root, &trial.record)?;
                        write_features(cache_root, &trial.features)?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().try_for_each(|h| h.join().expect("generator thread panicked"))
    })?;

    let split_path = root.join(SPLIT_FILE);
    let mut sets: std::collections::BTreeMap<SplitSet, Vec<&String>> = Default::default();
    for (p, s) in &spec.0 {
        sets.entry(*s).or_default().push(p);
    }
    fs::write(&split_path, serde_json::to_string_pretty(&sets)?).map_err(|e| Error::io(&split_path, e))?;
    Ok(SuiteLayout { dataset_root: root.to_path_buf(), split_path, cache_root, trials: scripts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, load_trial};
    use crate::features::load_features;

    fn script(task: Task, outcome: OutcomeLabel) -> ScenarioScript {
        ScenarioScript::new(task, outcome, 11)
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        let mut s = script(Task::R2H, OutcomeLabel::Success);
        s.durations[3] = 0;
        assert!(matches!(generate_trial(&s), Err(Error::ScriptError(_))));
        let s = script(Task::H2R, OutcomeLabel::NoGrasp);
        assert!(matches!(generate_trial(&s), Err(Error::ScriptError(_))));
        let s = script(Task::R2H, OutcomeLabel::NoRelease);
        assert!(matches!(generate_trial(&s), Err(Error::ScriptError(_))));
        let mut s = script(Task::R2H, OutcomeLabel::Drop);
        s.noise = -0.1;
        assert!(matches!(generate_trial(&s), Err(Error::ScriptError(_))));
    }

    #[test]
    fn success_r2h_releases_once_during_transfer() {
        let trial = generate_trial(&script(Task::R2H, OutcomeLabel::Success)).unwrap();
        let a = &trial.aligned;
        let robot = &a.labels.as_ref().unwrap().robot_actions;
        let transitions: Vec<usize> = (1..a.len()).filter(|&t| a.gripper[t] != a.gripper[t - 1]).collect();
        assert_eq!(transitions.len(), 1);
        let t = transitions[0];
        assert_eq!((a.gripper[t - 1], a.gripper[t]), (0.5, -0.5));
        assert_eq!(robot[t], RobotActionFull::Transfer);
    }

    #[test]
    fn h2r_grasp_closes_gripper() {
        let trial = generate_trial(&script(Task::H2R, OutcomeLabel::Success)).unwrap();
        let g = &trial.aligned.gripper;
        assert_eq!(g[0], -0.5);
        assert_eq!(*g.last().unwrap(), 0.5);
    }

    #[test]
    fn no_approach_is_idle_and_flat() {
        for task in [Task::R2H, Task::H2R] {
            let s = script(task, OutcomeLabel::NoApproach);
            let trial = generate_trial(&s).unwrap();
            let labels = trial.aligned.labels.as_ref().unwrap();
            assert!(labels.human_actions.iter().all(|&h| h == HumanAction::Idle));
            let sigma = s.noise * s.signature.transfer_force;
            for c in 0..6 {
                let col: Vec<f64> = trial.aligned.ft.iter().map(|w| w[c]).collect();
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                assert!(col.iter().all(|v| (v - mean).abs() < 6.0 * sigma), "channel {c} not flat");
            }
        }
    }

    #[test]
    fn transfer_force_is_detectable() {
        let s = ScenarioScript { durations: [10, 20, 40, 20, 10], ..script(Task::R2H, OutcomeLabel::Success) };
        let trial = generate_trial(&s).unwrap();
        let labels = trial.aligned.labels.as_ref().unwrap();
        let mean_abs = |which: HumanAction| {
            let v: Vec<f64> = (0..trial.aligned.len())
                .filter(|&t| labels.human_actions[t] == which)
                .map(|t| trial.aligned.ft[t][0].abs())
                .collect();
            (v.iter().sum::<f64>() / v.len() as f64, v.len())
        };
        let (transfer, n) = mean_abs(HumanAction::Transfer);
        let (idle, _) = mean_abs(HumanAction::Idle);
        let sigma = s.noise * s.signature.transfer_force;
        // idle |noise| has mean σ·√(2/π); allow 4 standard errors on top
        let tol = sigma * (2.0 / std::f64::consts::PI).sqrt() + 4.0 * sigma / (n as f64).sqrt();
        assert!((transfer - idle - s.signature.transfer_force).abs() < tol, "{transfer} vs {idle}");
    }

    #[test]
    fn failure_signatures() {
        let drop = generate_trial(&script(Task::H2R, OutcomeLabel::Drop)).unwrap();
        let g = drop.script.handover_frame();
        assert!(drop.aligned.ft[g + 1][0] > 0.8 * drop.script.signature.drop_spike);
        let nr = generate_trial(&script(Task::H2R, OutcomeLabel::NoRelease)).unwrap();
        let human = &nr.aligned.labels.as_ref().unwrap().human_actions;
        let pulls: Vec<f64> = (0..nr.aligned.len())
            .filter(|&t| human[t] == HumanAction::NotReleased && nr.aligned.gripper[t] == 0.5)
            .map(|t| nr.aligned.ft[t][0])
            .collect();
        assert!(!pulls.is_empty());
        let mean = pulls.iter().sum::<f64>() / pulls.len() as f64;
        assert!((mean - nr.script.signature.sustained_pull).abs() < 0.5);
        let ng = generate_trial(&script(Task::R2H, OutcomeLabel::NoGrasp)).unwrap();
        assert!(ng.aligned.gripper.iter().all(|&g| g == 0.5));
        assert!(!ng.aligned.labels.as_ref().unwrap().human_actions.contains(&HumanAction::Transfer));
    }

    #[test]
    fn robot_actions_are_recoverable_from_arm_speed() {
        let trial = generate_trial(&script(Task::H2R, OutcomeLabel::Success)).unwrap();
        let extracted = crate::dataset::extract_robot_actions(&trial.aligned.arm_speed, Default::default()).unwrap();
        assert_eq!(&extracted, &trial.aligned.labels.as_ref().unwrap().robot_actions);
    }

    #[test]
    fn generation_is_deterministic() {
        let s = script(Task::H2R, OutcomeLabel::NoRelease);
        let a = generate_trial(&s).unwrap();
        let b = generate_trial(&s).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.record.ft_raw, b.record.ft_raw);
        assert_eq!(a.record.joint_states, b.record.joint_states);
        assert_eq!(a.record.video.frames().unwrap(), b.record.video.frames().unwrap());
        let c = generate_trial(&ScenarioScript { seed: 12, ..s }).unwrap();
        assert_ne!(a.features.backbone, c.features.backbone);
    }

    #[test]
    fn balanced_suite_counts_and_split() {
        let config = SuiteConfig::balanced(3, 5);
        let (scripts, spec) = plan_suite(&config).unwrap();
        assert_eq!(scripts.len(), 24);
        for task in [Task::R2H, Task::H2R] {
            for outcome in OutcomeLabel::for_task(task) {
                assert_eq!(scripts.iter().filter(|s| s.task == task && s.outcome == outcome).count(), 3);
            }
        }
        let sizes = config.split_sizes();
        for (k, set) in [SplitSet::Train, SplitSet::Val, SplitSet::Test].iter().enumerate() {
            assert_eq!(scripts.iter().filter(|s| spec.0[&s.participant_id] == *set).count(), sizes[k]);
        }
        assert!(scripts.iter().any(|s| s.platform == RobotPlatform::KinovaGen3));
        let mut ids: Vec<&String> = scripts.iter().map(|s| &s.trial_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 24);
    }

    #[test]
    fn dataset_shaped_plan() {
        let config = SuiteConfig::dataset_shaped(1);
        assert_eq!(config.total(), 589);
        assert_eq!(config.split_sizes(), DATASET_SPLIT);
        let (scripts, spec) = plan_suite(&config).unwrap();
        assert_eq!(spec.0.len(), 17);
        let r2h = scripts.iter().filter(|s| s.task == Task::R2H).count();
        assert_eq!((r2h, scripts.len() - r2h), (297, 292));
    }

    #[test]
    fn written_suite_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let config = SuiteConfig::balanced(2, 9);
        let layout = write_suite(&config, dir.path()).unwrap();
        assert_eq!(layout.trials, 16);
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 16);
        let spec = SplitSpec::load(&layout.split_path).unwrap();
        assert!(loaded.iter().all(|t| spec.0.contains_key(&t.meta.participant_id)));

        let (trials, _) = generate_suite(&config).unwrap();
        let calib = GripperCalibrations::default();
        for trial in &trials {
            let record = load_trial(&dir.path().join(&trial.script.trial_id)).unwrap();
            assert_eq!(record.meta, trial.record.meta);
            let aligned = align_to_frames(&record, &calib).unwrap();
            assert_eq!(aligned.labels, trial.aligned.labels);
            assert_eq!(aligned.gripper, trial.aligned.gripper);
            for (a, b) in aligned.ft.iter().zip(&trial.aligned.ft) {
                assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6));
            }
            for (a, b) in aligned.arm_speed.iter().zip(&trial.aligned.arm_speed) {
                assert!((a - b).abs() <= 1e-6);
            }
            assert_eq!(record.video.frames().unwrap(), trial.record.video.frames().unwrap());
            let cached = load_features(&layout.cache_root, PSEUDO_BACKBONE_VERSION, &trial.script.trial_id).unwrap();
            assert_eq!(cached.labels, trial.features.labels);
            assert_eq!(cached.ft, trial.features.ft);
            let err = (&cached.backbone - &trial.features.backbone).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(err < 1e-5, "f32 cache error {err}");
        }
    }
}
