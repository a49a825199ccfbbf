use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSet {
    Train,
    Val,
    Test,
}

/// Participant → split assignment.
///
/// Accepted JSON forms: `{"p01": "train", ...}` or
/// `{"train": ["p01", ...], "val": [...], "test": [...]}`. A participant that
/// appears twice in either form is an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SplitSpec(pub BTreeMap<String, SplitSet>);

impl SplitSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::SplitSpecError(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn assign(&mut self, participant: &str, set: SplitSet) -> Result<()> {
        match self.0.insert(participant.to_string(), set) {
            Some(prev) if prev != set => {
                Err(Error::SplitSpecError(format!("participant {participant} assigned to both {prev:?} and {set:?}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SplitEntry {
    Set(SplitSet),
    List(Vec<String>),
}

impl<'de> Deserialize<'de> for SplitSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct SpecVisitor;

        impl<'de> Visitor<'de> for SpecVisitor {
            type Value = SplitSpec;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a participant → split map or a split → participant list map")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<SplitSpec, A::Error> {
                let mut spec = SplitSpec::default();
                let mut seen_keys = std::collections::BTreeSet::new();
                while let Some((key, entry)) = map.next_entry::<String, SplitEntry>()? {
                    if !seen_keys.insert(key.clone()) {
                        return Err(serde::de::Error::custom(format!("duplicate key {key}")));
                    }
                    match entry {
                        SplitEntry::Set(set) => spec.assign(&key, set),
                        SplitEntry::List(ps) => {
                            let set: SplitSet = serde_json::from_value(serde_json::Value::String(key.clone()))
                                .map_err(serde::de::Error::custom)?;
                            ps.iter().try_for_each(|p| {
                                if spec.0.contains_key(p) {
                                    Err(Error::SplitSpecError(format!("participant {p} listed twice")))
                                } else {
                                    spec.assign(p, set)
                                }
                            })
                        }
                    }
                    .map_err(serde::de::Error::custom)?;
                }
                Ok(spec)
            }
        }

        d.deserialize_map(SpecVisitor)
    }
}

/// Partition items by their participant's assigned split. Input order is
/// preserved within each set.
pub fn split_by_participant<T, F>(items: Vec<T>, spec: &SplitSpec, participant: F) -> Result<(Vec<T>, Vec<T>, Vec<T>)>
where
    F: Fn(&T) -> &str,
{
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for item in items {
        let p = participant(&item);
        match spec.0.get(p) {
            Some(SplitSet::Train) => train.push(item),
            Some(SplitSet::Val) => val.push(item),
            Some(SplitSet::Test) => test.push(item),
            None => return Err(Error::SplitSpecError(format!("participant {p} has no split assignment"))),
        }
    }
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_participant_all_train() {
        let spec = SplitSpec::from_json(r#"{"p1": "train"}"#).unwrap();
        let (tr, va, te) = split_by_participant(vec!["p1"; 4], &spec, |s| s).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (4, 0, 0));
    }

    #[test]
    fn participant_in_two_sets_is_rejected() {
        let err = SplitSpec::from_json(r#"{"train": ["p1", "p2"], "test": ["p1"]}"#).unwrap_err();
        assert!(matches!(err, Error::SplitSpecError(_)));
        let err = SplitSpec::from_json(r#"{"p1": "train", "p1": "test"}"#).unwrap_err();
        assert!(matches!(err, Error::SplitSpecError(_)));
    }

    #[test]
    fn unknown_participant_is_rejected() {
        let spec = SplitSpec::from_json(r#"{"val": ["a"]}"#).unwrap();
        assert!(split_by_participant(vec!["b"], &spec, |s| s).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_disjointness(
            assign in proptest::collection::vec(0u8..3, 1..12),
            trials in proptest::collection::vec(0usize..12, 0..60),
        ) {
            let mut spec = SplitSpec::default();
            for (i, a) in assign.iter().enumerate() {
                let set = [SplitSet::Train, SplitSet::Val, SplitSet::Test][*a as usize];
                spec.assign(&format!("p{i}"), set).unwrap();
            }
            let items: Vec<String> = trials.iter().map(|t| format!("p{}", t % assign.len())).collect();
            let (tr, va, te) = split_by_participant(items.clone(), &spec, |s| s.as_str()).unwrap();
            prop_assert_eq!(tr.len() + va.len() + te.len(), items.len());
            for a in &tr {
                prop_assert!(!va.contains(a) && !te.contains(a));
            }
            for a in &va {
                prop_assert!(!te.contains(a));
            }
        }
    }
}
