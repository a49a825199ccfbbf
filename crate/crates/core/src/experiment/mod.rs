//! Config-driven experiments: one TOML file per experiment, several seeds per
//! run, results appended to a per-directory store, and the table grids.

mod report;
mod run;
mod tables;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::classifiers::FusionVariant;
use crate::error::{Error, Result};
use crate::labels::{RobotPlatform, Task};
use crate::modality::Modalities;
use crate::segmentation::{ActiveHeads, MstcnVariant};

pub use report::{bar_chart_svg, curves_svg, render_report};
pub use run::{
    run_experiment, run_seed, score_artifact, segmentation_tally, train_seed, DataSplit, ExperimentData,
    ModelCheckpoint, Provenance, ResultRow, ResultStore, ScoredTrial, SeedCurve, SeedRun, TrainedArtifact,
    TrainedModel,
};
pub use tables::{reproduce_table, table_rows, TableCell, TableOutput, TableRow, TableRowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelId {
    I3d(FusionVariant),
    Mstcn(MstcnVariant),
    Correlation,
}

impl ModelId {
    pub fn is_mstcn(&self) -> bool {
        matches!(self, ModelId::Mstcn(_))
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::I3d(v) => write!(f, "i3d-{}", format!("{v:?}").to_ascii_lowercase()),
            ModelId::Mstcn(v) => write!(f, "mstcn-{}", format!("{v:?}").to_ascii_lowercase()),
            ModelId::Correlation => f.write_str("correlation"),
        }
    }
}

impl FromStr for ModelId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "correlation" => Ok(ModelId::Correlation),
            "mstcn-a" => Ok(ModelId::Mstcn(MstcnVariant::A)),
            "mstcn-b" => Ok(ModelId::Mstcn(MstcnVariant::B)),
            _ if s.starts_with("i3d-") => s.parse().map(ModelId::I3d),
            _ => Err(format!("unknown model `{s}` (expected i3d-a..d, mstcn-a, mstcn-b or correlation)")),
        }
    }
}

impl Serialize for ModelId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ModelId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Loss terms. `cls` is mandatory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LossHeads {
    pub seg_h: bool,
    pub seg_r: bool,
}

impl LossHeads {
    pub const CLS: LossHeads = LossHeads { seg_h: false, seg_r: false };
    pub const CLS_SEG_H: LossHeads = LossHeads { seg_h: true, seg_r: false };
    pub const ALL: LossHeads = LossHeads { seg_h: true, seg_r: true };

    pub fn active(&self) -> ActiveHeads {
        ActiveHeads { human: self.seg_h, robot: self.seg_r }
    }
}

impl fmt::Display for LossHeads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("cls")?;
        if self.seg_h {
            f.write_str(",seg_h")?;
        }
        if self.seg_r {
            f.write_str(",seg_r")?;
        }
        Ok(())
    }
}

impl FromStr for LossHeads {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut cls = false;
        let mut out = LossHeads::CLS;
        for part in s.split([',', '+']).map(|p| p.trim().to_ascii_lowercase()).filter(|p| !p.is_empty()) {
            match part.as_str() {
                "cls" => cls = true,
                "seg_h" | "seg-h" | "h" => out.seg_h = true,
                "seg_r" | "seg-r" | "r" => out.seg_r = true,
                other => return Err(format!("unknown loss head `{other}`")),
            }
        }
        if !cls {
            return Err("loss heads must include cls".into());
        }
        Ok(out)
    }
}

impl Serialize for LossHeads {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LossHeads {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// How F-T statistics are pooled over the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Pooled,
    PerPlatform,
}

/// One experiment. Every field except `name` and `output_dir` enters the
/// fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub model: ModelId,
    pub modalities: Modalities,
    pub heads: LossHeads,
    /// Restrict training and validation trials to one platform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_platform: Option<RobotPlatform>,
    /// Restrict test trials to one platform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_platform: Option<RobotPlatform>,
    /// Restrict every set to one handover direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub normalization: Normalization,
    /// Drop idle and post-idle segments from segmental F1.
    #[serde(default)]
    pub exclude_background: bool,
    #[serde(default)]
    pub hyper: Hyper,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Training hyperparameters. `lr` defaults per model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub max_epochs: usize,
    pub patience: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub momentum: f64,
    pub plateau: usize,
    pub hidden: usize,
    pub clip_len: usize,
    pub task_mask: bool,
    pub stages: usize,
    pub layers: usize,
    pub channels: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub tau: f64,
    pub resample_len: usize,
    pub signal_channels: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            max_epochs: 50,
            patience: 10,
            lr: None,
            batch_size: 8,
            momentum: 0.9,
            plateau: 3,
            hidden: 256,
            clip_len: crate::features::CLIP_LEN,
            task_mask: false,
            stages: 2,
            layers: 10,
            channels: 64,
            dropout: 0.5,
            lambda: 0.15,
            tau: 4.0,
            resample_len: 100,
            signal_channels: 64,
        }
    }
}

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

impl ExperimentConfig {
    pub fn new(model: ModelId, modalities: Modalities, heads: LossHeads) -> Self {
        ExperimentConfig {
            name: None,
            model,
            modalities,
            heads,
            train_platform: None,
            test_platform: None,
            task: None,
            seeds: default_seeds(),
            normalization: Normalization::default(),
            exclude_background: false,
            hyper: Hyper::default(),
            output_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Config("modality set is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        match self.model {
            ModelId::Mstcn(MstcnVariant::A) if self.heads.seg_r => Err(Error::Config("seg_r requires mstcn-b".into())),
            ModelId::I3d(_) if self.heads.seg_h || self.heads.seg_r => {
                Err(Error::Config("i3d classifiers train with cls only".into()))
            }
            _ => Ok(()),
        }
    }

    /// Learning rate actually used.
    pub fn lr(&self) -> f64 {
        self.hyper.lr.unwrap_or(match self.model {
            ModelId::I3d(_) => 1e-2,
            _ => crate::nn::AdamConfig::default().lr,
        })
    }

    /// Hex SHA-256 of the canonical JSON of every result-relevant field.
    pub fn fingerprint(&self) -> String {
        let canon = ExperimentConfig { name: None, output_dir: None, ..self.clone() };
        let json = serde_json::to_string(&canon).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}
