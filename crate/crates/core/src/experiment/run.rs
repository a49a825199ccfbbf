use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, ModelId, Normalization};
use crate::classifiers::{
    classifier_report, train_classifier, ClassifierCheckpoint, ClassifierConfig, ClassifierTrainConfig, ClipFeatures,
    FusionClassifier, StreamSet,
};
use crate::correlation::{evaluate_baseline_with, CorrelationTable};
use crate::dataset::{compute_ft_stats, NormalizationStats, SplitSpec, Wrench};
use crate::error::{Error, Result};
use crate::features::{list_cached, load_features, FeatureSequence};
use crate::labels::{HumanAction, OutcomeLabel, RobotActionModel, RobotPlatform};
use crate::metrics::{aggregate_runs, MetricsReport, SegmentationTally};
use crate::nn::AdamConfig;
use crate::segmentation::{
    evaluate_segmenter_with, prepare_trial, train_segmenter, Mstcn, MstcnConfig, PreparedTrial, SegmenterCheckpoint,
    TrainConfig,
};

/// Participant-disjoint train/val/test feature sequences.
#[derive(Debug, Clone, Default)]
pub struct DataSplit {
    pub train: Vec<FeatureSequence>,
    pub val: Vec<FeatureSequence>,
    pub test: Vec<FeatureSequence>,
}

#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub split: DataSplit,
    pub backbone_version: String,
    /// Digest of trial ids, lengths, labels and split membership.
    pub dataset_hash: String,
}

impl ExperimentData {
    pub fn from_sequences(all: Vec<FeatureSequence>, spec: &SplitSpec) -> Result<Self> {
        let backbone_version = all.first().map(|s| s.backbone_version.clone()).ok_or(Error::EmptyList)?;
        if let Some(s) = all.iter().find(|s| s.backbone_version != backbone_version) {
            return Err(Error::Config(format!(
                "mixed backbone versions: {} and {backbone_version}",
                s.backbone_version
            )));
        }
        let mut hasher = Sha256::new();
        for s in &all {
            let set = spec.0.get(&s.meta.participant_id).map(|s| format!("{s:?}")).unwrap_or_default();
            let outcome = s.labels.as_ref().map(|l| l.outcome.to_string()).unwrap_or_default();
            hasher.update(format!("{}|{}|{}|{}\n", s.trial_id(), s.len(), set, outcome).as_bytes());
        }
        let dataset_hash = hex::encode(hasher.finalize())[..16].to_string();
        let (train, val, test) = crate::dataset::split_by_participant(all, spec, |s| s.meta.participant_id.as_str())?;
        Ok(ExperimentData { split: DataSplit { train, val, test }, backbone_version, dataset_hash })
    }

    /// Every cached trial of `version` under `cache_root`.
    pub fn load(cache_root: &Path, version: &str, split_path: &Path) -> Result<Self> {
        let spec = SplitSpec::load(split_path)?;
        let ids = list_cached(cache_root, version)?;
        let all = ids.iter().map(|id| load_features(cache_root, version, id)).collect::<Result<Vec<_>>>()?;
        Self::from_sequences(all, &spec)
    }

    /// Apply the config's platform and task filters, then normalize F-T with
    /// statistics of the filtered training set.
    pub fn prepare(&self, config: &ExperimentConfig) -> Result<(DataSplit, NormalizationStats)> {
        let keep = |s: &FeatureSequence, platform: Option<RobotPlatform>| {
            platform.is_none_or(|p| s.meta.robot_platform == p) && config.task.is_none_or(|t| s.meta.task == t)
        };
        let pick = |v: &[FeatureSequence], p| v.iter().filter(|s| keep(s, p)).cloned().collect::<Vec<_>>();
        let train = pick(&self.split.train, config.train_platform);
        let val = pick(&self.split.val, config.train_platform);
        let test = pick(&self.split.test, config.test_platform);
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config(format!(
                "filters leave {} training and {} test trials",
                train.len(),
                test.len()
            )));
        }

        let rows: Vec<(RobotPlatform, Vec<Wrench>)> =
            train.iter().map(|s| (s.meta.robot_platform, s.ft_rows())).collect();
        let pooled = compute_ft_stats(rows.iter().map(|(_, r)| r.as_slice()));
        let per_platform: BTreeMap<RobotPlatform, NormalizationStats> = match config.normalization {
            Normalization::Pooled => BTreeMap::new(),
            Normalization::PerPlatform => {
                crate::dataset::compute_ft_stats_by_platform(rows.iter().map(|(p, r)| (*p, r.as_slice())))
            }
        };
        // platforms absent from training fall back to the pooled statistics
        let norm = |v: Vec<FeatureSequence>| -> Vec<FeatureSequence> {
            v.iter().map(|s| s.normalized(per_platform.get(&s.meta.robot_platform).unwrap_or(&pooled))).collect()
        };
        Ok((DataSplit { train: norm(train), val: norm(val), test: norm(test) }, pooled))
    }
}

/// Training curve of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCurve {
    pub seed: u64,
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub report: MetricsReport,
    pub curve: SeedCurve,
}

fn tally(config: &ExperimentConfig) -> SegmentationTally {
    segmentation_tally(config.exclude_background)
}

/// Empty tally; with `exclude_background`, idle and post-idle segments are
/// left out of F1 matching.
pub fn segmentation_tally(exclude_background: bool) -> SegmentationTally {
    if exclude_background {
        SegmentationTally::excluding(&[HumanAction::Idle.index(), HumanAction::PostIdle.index()])
    } else {
        SegmentationTally::default()
    }
}

/// A trained model of any family.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Correlation(CorrelationTable),
    Classifier(FusionClassifier),
    Segmenter(Mstcn),
}

/// Train and evaluate one seed on already prepared data.
pub fn run_seed(config: &ExperimentConfig, data: &DataSplit, seed: u64) -> Result<SeedRun> {
    train_seed(config, data, seed).map(|(_, run)| run)
}

/// As [`run_seed`], also returning the trained model.
pub fn train_seed(config: &ExperimentConfig, data: &DataSplit, seed: u64) -> Result<(TrainedModel, SeedRun)> {
    let h = &config.hyper;
    match config.model {
        ModelId::Correlation => {
            let table = CorrelationTable::fit(data.train.iter().map(|s| s.labels.as_ref()), false, "train")?;
            let report = evaluate_baseline_with(&table, data.test.iter().map(|s| s.labels.as_ref()), tally(config))?;
            let curve = SeedCurve { seed, train_loss: vec![], val_accuracy: vec![] };
            Ok((TrainedModel::Correlation(table), SeedRun { report, curve }))
        }
        ModelId::I3d(variant) => {
            let cc = classifier_config(config, variant);
            let clips = |v: &[FeatureSequence]| -> Result<Vec<ClipFeatures>> {
                v.iter().map(|s| ClipFeatures::from_sequence(s, h.clip_len)).collect()
            };
            let (train, val, test) = (clips(&data.train)?, clips(&data.val)?, clips(&data.test)?);
            let mut model = FusionClassifier::new(cc, seed)?;
            let tc = ClassifierTrainConfig {
                lr: config.lr(),
                momentum: h.momentum,
                batch_size: h.batch_size,
                max_epochs: h.max_epochs,
                patience: h.patience,
                plateau: h.plateau,
                seed,
            };
            let history = train_classifier(&mut model, &train, &val, &tc)?;
            let run = SeedRun {
                report: classifier_report(&model, &test)?,
                curve: SeedCurve {
                    seed,
                    train_loss: history.epochs.iter().map(|e| e.train_loss).collect(),
                    val_accuracy: history.epochs.iter().map(|e| e.val_accuracy).collect(),
                },
            };
            Ok((TrainedModel::Classifier(model), run))
        }
        ModelId::Mstcn(variant) => {
            let mc = mstcn_config(config, variant);
            let prep = |v: &[FeatureSequence]| -> Result<Vec<PreparedTrial>> {
                v.iter().map(|s| prepare_trial(s, &mc, None)).collect()
            };
            let (train, val, test) = (prep(&data.train)?, prep(&data.val)?, prep(&data.test)?);
            let mut model = Mstcn::new(mc.clone(), seed)?;
            let tc = TrainConfig {
                max_epochs: h.max_epochs,
                patience: h.patience,
                adam: AdamConfig { lr: config.lr(), ..AdamConfig::default() },
                seed,
            };
            let history = train_segmenter(&mut model, &train, &val, &tc)?;
            let (report, _) = evaluate_segmenter_with(&model, &test, tally(config))?;
            let run = SeedRun {
                report,
                curve: SeedCurve {
                    seed,
                    train_loss: history.epochs.iter().map(|e| e.train_loss.total).collect(),
                    val_accuracy: history.epochs.iter().map(|e| e.val_outcome_accuracy).collect(),
                },
            };
            Ok((TrainedModel::Segmenter(model), run))
        }
    }
}

fn classifier_config(config: &ExperimentConfig, variant: crate::classifiers::FusionVariant) -> ClassifierConfig {
    let h = &config.hyper;
    let mut cc = ClassifierConfig::new(variant, StreamSet::from_modalities(config.modalities));
    cc.hidden = h.hidden;
    cc.clip_len = h.clip_len;
    cc.task_mask = h.task_mask;
    cc.signal_channels = h.signal_channels;
    cc
}

fn mstcn_config(config: &ExperimentConfig, variant: crate::segmentation::MstcnVariant) -> MstcnConfig {
    let h = &config.hyper;
    let mut mc = MstcnConfig::new(variant, config.modalities, config.heads.active());
    mc.stages = h.stages;
    mc.layers_per_stage = h.layers;
    mc.channels = h.channels;
    mc.dropout = h.dropout;
    mc.lambda = h.lambda;
    mc.tau = h.tau;
    mc.resample_len = h.resample_len;
    mc
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelCheckpoint {
    Correlation(CorrelationTable),
    Classifier(ClassifierCheckpoint),
    Segmenter(SegmenterCheckpoint),
}

/// A trained model with the experiment that produced it and the F-T
/// statistics its inputs were normalized with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedArtifact {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub ft_stats: NormalizationStats,
    pub model: ModelCheckpoint,
}

impl TrainedArtifact {
    pub fn new(config: &ExperimentConfig, seed: u64, ft_stats: NormalizationStats, model: &TrainedModel) -> Self {
        let model = match model {
            TrainedModel::Correlation(t) => ModelCheckpoint::Correlation(t.clone()),
            TrainedModel::Classifier(m) => {
                ModelCheckpoint::Classifier(ClassifierCheckpoint::from_model(m, seed, Some(ft_stats)))
            }
            TrainedModel::Segmenter(m) => {
                ModelCheckpoint::Segmenter(SegmenterCheckpoint::from_model(m, seed, Some(ft_stats)))
            }
        };
        TrainedArtifact { config: config.clone(), seed, ft_stats, model }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))
    }
}

/// Prediction for one trial; fields a model family cannot produce are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub trial_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_track: Option<Vec<HumanAction>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_track: Option<Vec<RobotActionModel>>,
}

/// Apply a trained artifact to raw (unnormalized) sequences. Metrics are
/// computed over whichever trials carry labels.
pub fn score_artifact(
    artifact: &TrainedArtifact,
    seqs: &[FeatureSequence],
) -> Result<(Option<MetricsReport>, Vec<ScoredTrial>)> {
    let normed: Vec<FeatureSequence> = seqs.iter().map(|s| s.normalized(&artifact.ft_stats)).collect();
    let labelled = normed.iter().any(|s| s.labels.is_some());
    match &artifact.model {
        ModelCheckpoint::Correlation(table) => {
            let mut out = Vec::new();
            for s in &normed {
                let robot = s.robot_model_track().ok_or_else(|| Error::NoLabels(s.trial_id().to_string()))?;
                out.push(ScoredTrial {
                    trial_id: s.trial_id().to_string(),
                    outcome: None,
                    human_track: Some(table.predict(&robot)),
                    robot_track: None,
                });
            }
            let report =
                evaluate_baseline_with(table, normed.iter().map(|s| s.labels.as_ref()), tally(&artifact.config))?;
            Ok((Some(report), out))
        }
        ModelCheckpoint::Classifier(ckpt) => {
            let model = ckpt.to_model()?;
            let clips = normed
                .iter()
                .map(|s| ClipFeatures::from_sequence(s, model.config.clip_len))
                .collect::<Result<Vec<_>>>()?;
            let mut preds = Vec::with_capacity(clips.len());
            for chunk in clips.chunks(32) {
                preds.extend(model.predict(&chunk.iter().collect::<Vec<_>>())?);
            }
            let out = clips
                .iter()
                .zip(preds)
                .map(|(c, p)| ScoredTrial {
                    trial_id: c.trial_id.clone(),
                    outcome: Some(p),
                    human_track: None,
                    robot_track: None,
                })
                .collect();
            let report = if labelled { Some(classifier_report(&model, &clips)?) } else { None };
            Ok((report, out))
        }
        ModelCheckpoint::Segmenter(ckpt) => {
            let model = ckpt.to_model()?;
            let prepared = normed.iter().map(|s| prepare_trial(s, &model.config, None)).collect::<Result<Vec<_>>>()?;
            let (report, preds) = evaluate_segmenter_with(&model, &prepared, tally(&artifact.config))?;
            let out = preds
                .into_iter()
                .map(|p| ScoredTrial {
                    trial_id: p.trial_id,
                    outcome: Some(p.outcome),
                    human_track: Some(p.human_track),
                    robot_track: p.robot_track,
                })
                .collect();
            Ok((labelled.then_some(report), out))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_hash: String,
    pub backbone_version: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
}

/// Aggregated result of one experiment over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub fingerprint: String,
    pub config: ExperimentConfig,
    pub report: MetricsReport,
    /// Per-seed reports, in seed order.
    pub runs: Vec<MetricsReport>,
    pub curves: Vec<SeedCurve>,
    pub wall_clock_secs: f64,
    /// Seconds since the Unix epoch at completion.
    pub finished_at: u64,
    pub provenance: Provenance,
    /// Seeds that failed, with their error.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_seeds: Vec<(u64, String)>,
    pub complete: bool,
}

/// Run every seed (in parallel) and aggregate. Seeds that fail are recorded
/// and the row is marked incomplete; if all fail, the first error is returned.
pub fn run_experiment(config: &ExperimentConfig, data: &ExperimentData) -> Result<ResultRow> {
    config.validate()?;
    let start = Instant::now();
    let (split, _) = data.prepare(config)?;
    let outcomes: Vec<Result<SeedRun>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| {
                scope.spawn({
                    let split = &split;
                    move || run_seed(config, split, seed)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed thread panicked")).collect()
    });

    let mut runs = Vec::new();
    let mut curves = Vec::new();
    let mut failed_seeds = Vec::new();
    let mut first_err = None;
    for (&seed, outcome) in config.seeds.iter().zip(outcomes) {
        match outcome {
            Ok(r) => {
                runs.push(r.report);
                curves.push(r.curve);
            }
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failed_seeds.push((seed, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    if runs.is_empty() {
        return Err(first_err.expect("at least one seed"));
    }
    let report = aggregate_runs(&runs)?;
    Ok(ResultRow {
        fingerprint: config.fingerprint(),
        config: config.clone(),
        report,
        runs,
        curves,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        finished_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        provenance: Provenance {
            dataset_hash: data.dataset_hash.clone(),
            backbone_version: data.backbone_version.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: config.seeds.clone(),
        },
        complete: failed_seeds.is_empty(),
        failed_seeds,
    })
}

/// Append-only store: one `row_<fingerprint>_<n>.json` file per row, created atomically with
/// `create_new`, so concurrent writers never overwrite each other.
#[derive(Debug, Clone)]
pub struct ResultStore {
    pub dir: PathBuf,
}

impl ResultStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResultStore { dir })
    }

    pub fn append(&self, row: &ResultRow) -> Result<PathBuf> {
        let body = serde_json::to_string_pretty(row)?;
        for n in 0.. {
            let path = self.dir.join(format!("row_{}_{n:04}.json", row.fingerprint));
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
                    return Ok(path);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        unreachable!("row counter exhausted")
    }

    /// Every stored row, ordered by file name.
    pub fn load_all(&self) -> Result<Vec<ResultRow>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)
            .map_err(|e| Error::io(&self.dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("row_") && n.ends_with(".json"))
            })
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::schema(p, e.to_string()))
            })
            .collect()
    }

    /// Most recent row for `fingerprint`.
    pub fn latest(&self, fingerprint: &str) -> Result<Option<ResultRow>> {
        Ok(self.load_all()?.into_iter().filter(|r| r.fingerprint == fingerprint).max_by_key(|r| r.finished_at))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::LossHeads;
    use crate::modality::Modalities;
    use crate::synthetic::{generate_suite, SuiteConfig};

    fn data() -> ExperimentData {
        let (trials, spec) = generate_suite(&SuiteConfig::balanced(2, 4)).unwrap();
        ExperimentData::from_sequences(trials.into_iter().map(|t| t.features).collect(), &spec).unwrap()
    }

    #[test]
    fn correlation_rows_have_zero_spread() {
        let config = ExperimentConfig::new(ModelId::Correlation, Modalities::VIDEO, LossHeads::CLS_SEG_H);
        let row = run_experiment(&config, &data()).unwrap();
        assert!(row.complete);
        assert_eq!(row.report.n_runs, 5);
        assert_eq!(row.report.frame_accuracy.unwrap().std, Some(0.0));
        assert!(row.report.f1_at[&50].std == Some(0.0));
    }

    #[test]
    fn filters_and_empty_sets() {
        let d = data();
        let mut config = ExperimentConfig::new(ModelId::Correlation, Modalities::VIDEO, LossHeads::CLS);
        config.train_platform = Some(RobotPlatform::Hsr);
        config.task = Some(crate::labels::Task::H2R);
        let (split, _) = d.prepare(&config).unwrap();
        assert!(split.train.iter().all(|s| s.meta.robot_platform == RobotPlatform::Hsr));
        assert!(split.test.iter().chain(&split.train).all(|s| s.meta.task == crate::labels::Task::H2R));
        let pooled_train: Vec<Wrench> = split.train.iter().flat_map(|s| s.ft_rows()).collect();
        let mean_fx = pooled_train.iter().map(|w| w[0]).sum::<f64>() / pooled_train.len() as f64;
        assert!(mean_fx.abs() < 1e-9, "training F-T is centred");
    }

    #[test]
    fn artifact_scores_like_training_evaluation() {
        let d = data();
        let mut config = ExperimentConfig::new(
            ModelId::Mstcn(crate::segmentation::MstcnVariant::B),
            Modalities::ALL,
            LossHeads::ALL,
        );
        config.hyper.max_epochs = 2;
        config.hyper.layers = 3;
        config.hyper.channels = 8;
        let (split, stats) = d.prepare(&config).unwrap();
        let (model, run) = train_seed(&config, &split, 3).unwrap();
        let artifact = TrainedArtifact::new(&config, 3, stats, &model);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        artifact.save(&path).unwrap();
        let loaded = TrainedArtifact::load(&path).unwrap();
        let (report, preds) = score_artifact(&loaded, &d.split.test).unwrap();
        assert_eq!(report.unwrap(), run.report);
        assert_eq!(preds.len(), d.split.test.len());
        assert!(preds.iter().all(|p| p.robot_track.is_some()));
    }

    #[test]
    fn store_appends_without_overwriting() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::new(dir.path()).unwrap();
        let config = ExperimentConfig {
            seeds: vec![0],
            ..ExperimentConfig::new(ModelId::Correlation, Modalities::VIDEO, LossHeads::CLS)
        };
        let row = run_experiment(&config, &data()).unwrap();
        let a = store.append(&row).unwrap();
        let b = store.append(&row).unwrap();
        assert_ne!(a, b);
        let rows = store.load_all().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], row);
        assert!(store.latest(&row.fingerprint).unwrap().is_some());
    }
}
