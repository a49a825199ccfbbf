use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Input modalities of the experiment grid: video features, F-T, gripper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Modalities {
    pub video: bool,
    pub ft: bool,
    pub gripper: bool,
}

impl Modalities {
    pub const ALL: Modalities = Modalities { video: true, ft: true, gripper: true };
    pub const VIDEO: Modalities = Modalities { video: true, ft: false, gripper: false };

    pub fn is_empty(&self) -> bool {
        !(self.video || self.ft || self.gripper)
    }

    /// Raw signal channels fed to the F-T/gripper encoder.
    pub fn signal_channels(&self) -> usize {
        6 * self.ft as usize + self.gripper as usize
    }

    pub fn has_signals(&self) -> bool {
        self.ft || self.gripper
    }
}

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.video {
            parts.push("v");
        }
        if self.ft {
            parts.push("ft");
        }
        if self.gripper {
            parts.push("g");
        }
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Modalities {
    type Err = String;

    /// Comma-separated subset of `v`/`video`, `ft`, `g`/`gripper`. The
    /// classifier stream names `rgb` and `flow` count as video.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut m = Modalities::default();
        for part in s.split([',', '+']).map(|p| p.trim().to_ascii_lowercase()).filter(|p| !p.is_empty()) {
            match part.as_str() {
                "v" | "video" | "rgb" | "flow" => m.video = true,
                "ft" | "f-t" | "force" => m.ft = true,
                "g" | "gripper" => m.gripper = true,
                other => return Err(format!("unknown modality `{other}`")),
            }
        }
        if m.is_empty() {
            return Err("modality set is empty".into());
        }
        Ok(m)
    }
}

impl Serialize for Modalities {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Modalities {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
