use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    inverse_indices, loss_total, model_segments, resample_indices, LossBreakdown, Mstcn, MstcnConfig, MstcnVariant,
    Targets,
};
use crate::dataset::NormalizationStats;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::labels::{HumanAction, OutcomeLabel, RobotActionModel};
use crate::metrics::{outcome_accuracy, MetricsReport, SegmentationTally};
use crate::nn::{seeded_rng, Adam, AdamConfig, Parameterized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    /// Drives shuffling and dropout.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { max_epochs: 50, patience: 10, adam: AdamConfig::default(), seed: 0 }
    }
}

/// A trial in model-facing form: resampled for variant A, with targets and
/// the mapping back to original frames.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub input: FeatureSequence,
    pub targets: Targets,
    /// Original frame → model position (variant A only).
    pub inverse: Option<Vec<usize>>,
    pub human_gt: Option<Vec<HumanAction>>,
    pub robot_gt: Option<Vec<RobotActionModel>>,
    pub outcome_gt: Option<OutcomeLabel>,
}

impl PreparedTrial {
    pub fn trial_id(&self) -> &str {
        self.input.trial_id()
    }
}

/// Build the model input for one trial. Variant A resamples using
/// `robot_track`, falling back to the annotated robot track.
pub fn prepare_trial(
    seq: &FeatureSequence,
    config: &MstcnConfig,
    robot_track: Option<&[RobotActionModel]>,
) -> Result<PreparedTrial> {
    let annotated_robot = seq.robot_model_track();
    let human_gt = seq.labels.as_ref().map(|l| l.human_actions.clone());
    let outcome_gt = seq.labels.as_ref().map(|l| l.outcome);
    let (input, inverse) = match config.variant {
        MstcnVariant::B => (seq.clone(), None),
        MstcnVariant::A => {
            let track = robot_track
                .map(<[RobotActionModel]>::to_vec)
                .or_else(|| annotated_robot.clone())
                .ok_or(Error::MissingTarget("robot track for resampling"))?;
            if track.len() != seq.len() {
                return Err(Error::LengthMismatch(track.len(), seq.len()));
            }
            let segs = model_segments(&track)?;
            let fwd = resample_indices(&segs, config.resample_len)?;
            (seq.select(&fwd), Some(inverse_indices(&segs, config.resample_len)?))
        }
    };
    let targets = Targets {
        human: input.labels.as_ref().map(|l| l.human_actions.iter().map(|a| a.index()).collect()),
        robot: input.robot_model_track().map(|t| t.iter().map(|a| a.index()).collect()),
        outcome: outcome_gt.map(OutcomeLabel::index),
    };
    Ok(PreparedTrial { input, targets, inverse, human_gt, robot_gt: annotated_robot, outcome_gt })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: LossBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_outcome_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let mut m = LossBreakdown::default();
    for b in items {
        m.outcome += b.outcome / n;
        m.human_cls += b.human_cls / n;
        m.human_smooth += b.human_smooth / n;
        m.robot_cls += b.robot_cls / n;
        m.robot_smooth += b.robot_smooth / n;
        m.total += b.total / n;
    }
    m
}

/// Adam with one trial per step. With a non-empty validation set, stops after
/// `patience` epochs without a better validation outcome accuracy and
/// restores the best weights.
pub fn train_segmenter(
    model: &mut Mstcn,
    train: &[PreparedTrial],
    val: &[PreparedTrial],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if train.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut rng = seeded_rng(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(train.len());
        for &i in &order {
            let trial = &train[i];
            let (out, trace) = model.forward_traced(&trial.input, Some(&mut rng))?;
            let (loss, grads) = loss_total(&out, &trial.targets, &model.config)?;
            if !loss.total.is_finite() {
                return Err(Error::DivergenceError { epoch, loss: loss.total });
            }
            model.zero_grad();
            model.backward(&out, &trace, &grads);
            adam.step(model.params_mut());
            losses.push(loss);
        }
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(evaluate_segmenter(model, val)?.0.outcome_accuracy.map_or(0.0, |s| s.mean))
        };
        let record = EpochRecord { epoch, train_loss: mean_breakdown(&losses), val_outcome_accuracy: val_acc };
        log::info!("epoch {epoch}: loss {:.4} val acc {:?}", record.train_loss.total, val_acc);
        history.epochs.push(record);

        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model.export_weights()));
                history.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        } else {
            history.best_epoch = epoch;
        }
    }
    if let Some((_, weights)) = best {
        model.import_weights(&weights)?;
    }
    Ok(history)
}

/// Predictions of one trial on its original frame grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub trial_id: String,
    pub human_track: Vec<HumanAction>,
    pub outcome: OutcomeLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_track: Option<Vec<RobotActionModel>>,
}

/// Per-trial prediction JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub human_track: Vec<HumanAction>,
    pub outcome: OutcomeLabel,
    #[serde(default)]
    pub robot_track: Vec<RobotActionModel>,
}

impl Prediction {
    pub fn to_file(&self) -> PredictionFile {
        PredictionFile {
            human_track: self.human_track.clone(),
            outcome: self.outcome,
            robot_track: self.robot_track.clone().unwrap_or_default(),
        }
    }

    /// Write `<dir>/<trial_id>.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.json", self.trial_id));
        fs::write(&path, serde_json::to_string_pretty(&self.to_file())?).map_err(|e| Error::io(&path, e))
    }
}

/// Last-stage argmax per frame; outcome from the final frame. Variant A
/// outputs are mapped back to the original frames.
pub fn predict(model: &Mstcn, trial: &PreparedTrial) -> Result<Prediction> {
    let out = model.forward(&trial.input)?;
    let mut human_track = out.human_track();
    let mut robot_track = out.robot_track();
    if let Some(inv) = &trial.inverse {
        human_track = inv.iter().map(|&j| human_track[j]).collect();
        robot_track = robot_track.map(|r| inv.iter().map(|&j| r[j]).collect());
    }
    Ok(Prediction { trial_id: trial.trial_id().to_string(), human_track, outcome: out.outcome(), robot_track })
}

/// Outcome accuracy and pooled human-action segmentation metrics over labelled trials.
pub fn evaluate_segmenter(model: &Mstcn, trials: &[PreparedTrial]) -> Result<(MetricsReport, Vec<Prediction>)> {
    evaluate_segmenter_with(model, trials, SegmentationTally::default())
}

/// As [`evaluate_segmenter`], pooling segmentation metrics into `tally`
/// (e.g. one that excludes background labels).
pub fn evaluate_segmenter_with(
    model: &Mstcn,
    trials: &[PreparedTrial],
    mut tally: SegmentationTally,
) -> Result<(MetricsReport, Vec<Prediction>)> {
    let mut preds = Vec::with_capacity(trials.len());
    let (mut pred_out, mut gt_out) = (Vec::new(), Vec::new());
    let mut has_seg = false;
    for trial in trials {
        let p = predict(model, trial)?;
        if let Some(gt) = trial.outcome_gt {
            pred_out.push(p.outcome);
            gt_out.push(gt);
        }
        if let Some(gt) = &trial.human_gt {
            let pi: Vec<usize> = p.human_track.iter().map(|a| a.index()).collect();
            let gi: Vec<usize> = gt.iter().map(|a| a.index()).collect();
            tally.add(&pi, &gi)?;
            has_seg = true;
        }
        preds.push(p);
    }
    let acc = if gt_out.is_empty() { None } else { Some(outcome_accuracy(&pred_out, &gt_out)?) };
    Ok((MetricsReport::single(acc, has_seg.then_some(&tally)), preds))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabularies {
    pub human: Vec<String>,
    pub outcome: Vec<String>,
    pub robot: Vec<String>,
}

impl Default for Vocabularies {
    fn default() -> Self {
        let own = |v: Vec<&str>| v.into_iter().map(str::to_string).collect();
        Vocabularies {
            human: own(HumanAction::vocabulary()),
            outcome: own(OutcomeLabel::vocabulary()),
            robot: own(RobotActionModel::vocabulary()),
        }
    }
}

/// Serialized segmenter: configuration, weights, label vocabularies, seed
/// and the F-T statistics its inputs were normalized with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmenterCheckpoint {
    pub config: MstcnConfig,
    pub seed: u64,
    pub vocabularies: Vocabularies,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ft_stats: Option<NormalizationStats>,
    pub weights: Vec<Vec<f64>>,
}

impl SegmenterCheckpoint {
    pub fn from_model(model: &Mstcn, seed: u64, ft_stats: Option<NormalizationStats>) -> Self {
        SegmenterCheckpoint {
            config: model.config.clone(),
            seed,
            vocabularies: Vocabularies::default(),
            ft_stats,
            weights: model.export_weights(),
        }
    }

    pub fn to_model(&self) -> Result<Mstcn> {
        let current = Vocabularies::default();
        if self.vocabularies.human != current.human
            || self.vocabularies.outcome != current.outcome
            || self.vocabularies.robot != current.robot
        {
            return Err(Error::Config("checkpoint label vocabularies differ from this build".into()));
        }
        let mut m = Mstcn::new(self.config.clone(), self.seed)?;
        m.import_weights(&self.weights)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modality::Modalities;
    use crate::segmentation::model::tests::{random_sequence, tiny_config};
    use crate::segmentation::ActiveHeads;

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let cfg = {
            let mut c = tiny_config(MstcnVariant::B, Modalities::ALL, ActiveHeads::ALL);
            c.dropout = 0.0;
            c
        };
        let trials: Vec<PreparedTrial> =
            (0..4).map(|i| prepare_trial(&random_sequence(30, 5, i), &cfg, None).unwrap()).collect();
        let tc = TrainConfig {
            max_epochs: 15,
            adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        let mut a = Mstcn::new(cfg.clone(), 1).unwrap();
        let ha = train_segmenter(&mut a, &trials, &[], &tc).unwrap();
        assert!(ha.epochs.last().unwrap().train_loss.total < ha.epochs[0].train_loss.total);
        let mut b = Mstcn::new(cfg, 1).unwrap();
        let hb = train_segmenter(&mut b, &trials, &[], &tc).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn early_stopping_restores_best() {
        let cfg = tiny_config(MstcnVariant::B, Modalities::ALL, ActiveHeads::HUMAN);
        let trials: Vec<PreparedTrial> =
            (0..3).map(|i| prepare_trial(&random_sequence(20, 5, i), &cfg, None).unwrap()).collect();
        let tc = TrainConfig { max_epochs: 40, patience: 2, ..TrainConfig::default() };
        let mut m = Mstcn::new(cfg, 2).unwrap();
        let h = train_segmenter(&mut m, &trials, &trials, &tc).unwrap();
        let best = h.epochs[h.best_epoch].val_outcome_accuracy.unwrap();
        assert!(h.epochs.iter().all(|e| e.val_outcome_accuracy.unwrap() <= best));
        let now = evaluate_segmenter(&m, &trials).unwrap().0.outcome_accuracy.unwrap().mean;
        assert_eq!(now, best);
    }

    #[test]
    fn variant_a_predicts_on_original_frames() {
        let mut cfg = tiny_config(MstcnVariant::A, Modalities::ALL, ActiveHeads::HUMAN);
        cfg.resample_len = 10;
        let seq = random_sequence(37, 5, 3);
        let p = prepare_trial(&seq, &cfg, None).unwrap();
        assert_eq!(p.input.len(), 30);
        let m = Mstcn::new(cfg, 0).unwrap();
        let pred = predict(&m, &p).unwrap();
        assert_eq!(pred.human_track.len(), 37);
        assert!(pred.robot_track.is_none());
        let (report, _) = evaluate_segmenter(&m, &[p]).unwrap();
        assert!(report.frame_accuracy.is_some());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = tiny_config(MstcnVariant::B, Modalities::ALL, ActiveHeads::ALL);
        let m = Mstcn::new(cfg, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        SegmenterCheckpoint::from_model(&m, 4, None).save(&path).unwrap();
        let back = SegmenterCheckpoint::load(&path).unwrap().to_model().unwrap();
        assert_eq!(back, m);
        let seq = random_sequence(12, 5, 1);
        let pred = predict(&m, &prepare_trial(&seq, &m.config, None).unwrap()).unwrap();
        pred.save(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("r1.json")).unwrap();
        let file: PredictionFile = serde_json::from_str(&text).unwrap();
        assert_eq!(file, pred.to_file());
        assert_eq!(file.robot_track.len(), 12);
    }
}
