//! Label vocabularies shared by every module.
//!
//! Each vocabulary has a stable integer encoding (its declaration order) and
//! a canonical lowercase string form used in every file format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! vocabulary {
    (
        $(#[$meta:meta])*
        $name:ident { $($variant:ident = $idx:literal => $canon:literal $(| $alias:literal)*),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant = $idx),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub const COUNT: usize = Self::ALL.len();

            #[inline]
            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(idx: usize) -> Option<Self> {
                Self::ALL.get(idx).copied()
            }

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $canon),+
                }
            }

            pub fn vocabulary() -> Vec<&'static str> {
                Self::ALL.iter().map(|v| v.as_str()).collect()
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
                match norm.as_str() {
                    $($canon $(| $alias)* => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} label `{}`", stringify!($name), s)),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

vocabulary! {
    /// Human action per frame. Encoding 0..=6.
    HumanAction {
        Idle = 0 => "idle",
        Approach = 1 => "approach",
        Transfer = 2 => "transfer" | "interact",
        Retract = 3 => "retract",
        PostIdle = 4 => "post_idle" | "postidle",
        NotReleased = 5 => "not_released",
        Dropped = 6 => "dropped",
    }
}

vocabulary! {
    /// Robot action as annotated (five phases, always in this order).
    RobotActionFull {
        Idle = 0 => "idle",
        Approach = 1 => "approach",
        Transfer = 2 => "transfer" | "interact",
        Retract = 3 => "retract",
        PostIdle = 4 => "post_idle" | "postidle",
    }
}

vocabulary! {
    /// Robot action as seen by the models (three phases).
    RobotActionModel {
        Approach = 0 => "approach",
        Transfer = 1 => "transfer" | "interact",
        Retract = 2 => "retract",
    }
}

vocabulary! {
    /// Trial-level outcome.
    OutcomeLabel {
        Success = 0 => "success",
        NoApproach = 1 => "no_approach",
        NoGrasp = 2 => "no_grasp",
        Drop = 3 => "drop",
        NoRelease = 4 => "no_release",
    }
}

vocabulary! {
    /// Handover direction.
    Task {
        R2H = 0 => "r2h",
        H2R = 1 => "h2r",
    }
}

vocabulary! {
    RobotPlatform {
        Hsr = 0 => "hsr" | "toyota_hsr",
        KinovaGen3 = 1 => "kinova_gen3" | "kinova",
    }
}

impl RobotActionFull {
    /// Collapse the annotated five phases onto the three model-facing ones.
    pub fn to_model(self) -> RobotActionModel {
        match self {
            RobotActionFull::Idle | RobotActionFull::Approach => RobotActionModel::Approach,
            RobotActionFull::Transfer => RobotActionModel::Transfer,
            RobotActionFull::Retract | RobotActionFull::PostIdle => RobotActionModel::Retract,
        }
    }
}

impl OutcomeLabel {
    pub fn valid_for(self, task: Task) -> bool {
        match self {
            OutcomeLabel::NoGrasp => task == Task::R2H,
            OutcomeLabel::NoRelease => task == Task::H2R,
            _ => true,
        }
    }

    /// Outcomes in the column order of the dataset statistics table.
    pub fn for_task(task: Task) -> [OutcomeLabel; 4] {
        match task {
            Task::R2H => [OutcomeLabel::Success, OutcomeLabel::NoApproach, OutcomeLabel::NoGrasp, OutcomeLabel::Drop],
            Task::H2R => [OutcomeLabel::Success, OutcomeLabel::NoApproach, OutcomeLabel::NoRelease, OutcomeLabel::Drop],
        }
    }
}

pub fn to_model_track(track: &[RobotActionFull]) -> Vec<RobotActionModel> {
    track.iter().map(|a| a.to_model()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodings_are_stable() {
        assert_eq!(HumanAction::COUNT, 7);
        assert_eq!(OutcomeLabel::COUNT, 5);
        assert_eq!(RobotActionModel::COUNT, 3);
        assert_eq!(HumanAction::Dropped.index(), 6);
        assert_eq!(HumanAction::from_index(4), Some(HumanAction::PostIdle));
        assert_eq!(OutcomeLabel::NoRelease.index(), 4);
    }

    #[test]
    fn parses_aliases() {
        assert_eq!("interact".parse::<HumanAction>().unwrap(), HumanAction::Transfer);
        assert_eq!("Post-Idle".parse::<HumanAction>().unwrap(), HumanAction::PostIdle);
        assert_eq!("not released".parse::<HumanAction>().unwrap(), HumanAction::NotReleased);
        assert!("grasp".parse::<HumanAction>().is_err());
    }

    #[test]
    fn full_to_model_mapping() {
        use RobotActionFull as F;
        use RobotActionModel as M;
        let mapped: Vec<_> = F::ALL.iter().map(|a| a.to_model()).collect();
        assert_eq!(mapped, vec![M::Approach, M::Approach, M::Transfer, M::Retract, M::Retract]);
    }

    #[test]
    fn task_consistency() {
        assert!(!OutcomeLabel::NoGrasp.valid_for(Task::H2R));
        assert!(!OutcomeLabel::NoRelease.valid_for(Task::R2H));
        assert!(OutcomeLabel::Drop.valid_for(Task::H2R));
    }

    #[test]
    fn serde_uses_canonical_strings() {
        let s = serde_json::to_string(&OutcomeLabel::NoApproach).unwrap();
        assert_eq!(s, "\"no_approach\"");
        let back: OutcomeLabel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, OutcomeLabel::NoApproach);
    }
}
