//! Non-learned baseline: the most frequent human action given the robot's
//! current action and how far into that action the frame lies.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::AnnotationTrack;
use crate::error::{Error, Result};
use crate::labels::{to_model_track, HumanAction, OutcomeLabel, RobotActionModel};
use crate::metrics::{MetricsReport, SegmentationTally};

pub const PROGRESS_BINS: usize = 10;

type Counts = [[[u64; HumanAction::COUNT]; PROGRESS_BINS]; RobotActionModel::COUNT];

/// Progress decile of every frame within its run of equal robot actions:
/// `floor(10·j/n)` for position `j` of a run of length `n`.
pub fn progress_bins(track: &[RobotActionModel]) -> Vec<usize> {
    let mut out = Vec::with_capacity(track.len());
    let mut start = 0;
    while start < track.len() {
        let end = track[start..].iter().position(|a| *a != track[start]).map_or(track.len(), |p| start + p);
        let n = end - start;
        out.extend((0..n).map(|j| (PROGRESS_BINS * j / n).min(PROGRESS_BINS - 1)));
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationTable {
    /// `counts[robot][decile][human]`.
    pub counts: Counts,
    pub fitted_on: String,
    pub robot_vocabulary: Vec<String>,
    pub human_vocabulary: Vec<String>,
}

impl CorrelationTable {
    pub fn empty(fitted_on: impl Into<String>) -> Self {
        let own = |v: Vec<&str>| v.into_iter().map(str::to_string).collect();
        CorrelationTable {
            counts: [[[0; HumanAction::COUNT]; PROGRESS_BINS]; RobotActionModel::COUNT],
            fitted_on: fitted_on.into(),
            robot_vocabulary: own(RobotActionModel::vocabulary()),
            human_vocabulary: own(HumanAction::vocabulary()),
        }
    }

    /// Count every frame of the labelled tracks. With `nominal_only`, only
    /// successful trials contribute.
    pub fn fit<'a, I>(tracks: I, nominal_only: bool, fitted_on: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = Option<&'a AnnotationTrack>>,
    {
        let mut table = CorrelationTable::empty(fitted_on);
        for (i, track) in tracks.into_iter().enumerate() {
            let track = track.ok_or_else(|| Error::NoLabels(format!("trial #{i}")))?;
            if nominal_only && track.outcome != OutcomeLabel::Success {
                continue;
            }
            let robot = to_model_track(&track.robot_actions);
            for ((r, bin), h) in robot.iter().zip(progress_bins(&robot)).zip(&track.human_actions) {
                table.counts[r.index()][bin][h.index()] += 1;
            }
        }
        Ok(table)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().flatten().sum()
    }

    /// `(robot, decile)` cells with no training frames.
    pub fn empty_cells(&self) -> Vec<(RobotActionModel, usize)> {
        let mut out = Vec::new();
        for (r, bins) in self.counts.iter().enumerate() {
            for (b, cell) in bins.iter().enumerate() {
                if cell.iter().all(|&c| c == 0) {
                    out.push((RobotActionModel::ALL[r], b));
                }
            }
        }
        out
    }

    fn marginal(&self, r: usize) -> [u64; HumanAction::COUNT] {
        let mut m = [0; HumanAction::COUNT];
        for cell in &self.counts[r] {
            for (a, c) in m.iter_mut().zip(cell) {
                *a += c;
            }
        }
        m
    }

    /// Per-frame argmax of the cell counts, lowest action index on ties.
    /// Empty cells use the robot action's marginal over all deciles.
    pub fn predict(&self, robot_track: &[RobotActionModel]) -> Vec<HumanAction> {
        let marginals: Vec<[u64; HumanAction::COUNT]> =
            (0..RobotActionModel::COUNT).map(|r| self.marginal(r)).collect();
        robot_track
            .iter()
            .zip(progress_bins(robot_track))
            .map(|(r, bin)| {
                let cell = &self.counts[r.index()][bin];
                let source = if cell.iter().any(|&c| c > 0) { cell } else { &marginals[r.index()] };
                HumanAction::ALL[argmax_first(source)]
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: CorrelationTable = serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
        let fresh = CorrelationTable::empty("");
        if t.robot_vocabulary != fresh.robot_vocabulary || t.human_vocabulary != fresh.human_vocabulary {
            return Err(Error::schema(path, "label vocabularies differ from this build"));
        }
        Ok(t)
    }
}

fn argmax_first(counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Pooled segmentation metrics of the table's predictions, driven by the
/// labelled robot tracks.
pub fn evaluate_baseline<'a, I>(table: &CorrelationTable, tracks: I) -> Result<MetricsReport>
where
    I: IntoIterator<Item = Option<&'a AnnotationTrack>>,
{
    evaluate_baseline_with(table, tracks, SegmentationTally::default())
}

/// As [`evaluate_baseline`], pooling into `tally`.
pub fn evaluate_baseline_with<'a, I>(
    table: &CorrelationTable,
    tracks: I,
    mut tally: SegmentationTally,
) -> Result<MetricsReport>
where
    I: IntoIterator<Item = Option<&'a AnnotationTrack>>,
{
    for (i, track) in tracks.into_iter().enumerate() {
        let track = track.ok_or_else(|| Error::NoLabels(format!("trial #{i}")))?;
        let pred = table.predict(&to_model_track(&track.robot_actions));
        let p: Vec<usize> = pred.iter().map(|a| a.index()).collect();
        let g: Vec<usize> = track.human_actions.iter().map(|a| a.index()).collect();
        tally.add(&p, &g)?;
    }
    Ok(MetricsReport::single(None, Some(&tally)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::RobotActionFull;
    use proptest::prelude::*;
    use HumanAction as H;
    use RobotActionFull as R;

    fn expand<A: Copy>(v: &[(A, usize)]) -> Vec<A> {
        v.iter().flat_map(|&(a, n)| std::iter::repeat_n(a, n)).collect()
    }

    fn track(robot: &[(R, usize)], human: &[(H, usize)], outcome: OutcomeLabel) -> AnnotationTrack {
        AnnotationTrack { robot_actions: expand(robot), human_actions: expand(human), outcome }
    }

    /// Frame-by-frame recount, with progress computed from explicit run boundaries.
    fn oracle_counts(tracks: &[AnnotationTrack]) -> Counts {
        let mut c = [[[0; 7]; 10]; 3];
        for t in tracks {
            let r = to_model_track(&t.robot_actions);
            for i in 0..r.len() {
                let mut s = i;
                while s > 0 && r[s - 1] == r[i] {
                    s -= 1;
                }
                let mut e = i;
                while e + 1 < r.len() && r[e + 1] == r[i] {
                    e += 1;
                }
                let p = (i - s) as f64 / (e - s + 1) as f64;
                let bin = ((10.0 * p + 1e-9).floor() as usize).min(9);
                c[r[i].index()][bin][t.human_actions[i].index()] += 1;
            }
        }
        c
    }

    #[test]
    fn constant_trial_concentrates() {
        let t = track(&[(R::Approach, 37)], &[(H::Approach, 37)], OutcomeLabel::Success);
        let table = CorrelationTable::fit([Some(&t)], false, "toy").unwrap();
        assert_eq!(table.total(), 37);
        for bin in 0..10 {
            assert!(table.counts[0][bin][H::Approach.index()] > 0);
        }
        assert_eq!(table.counts[0].iter().flatten().sum::<u64>(), 37);
    }

    #[test]
    fn toy_set_matches_hand_count() {
        let a = track(
            &[(R::Idle, 2), (R::Approach, 4), (R::Transfer, 5), (R::Retract, 3), (R::PostIdle, 1)],
            &[(H::Idle, 3), (H::Approach, 3), (H::Transfer, 6), (H::Retract, 3)],
            OutcomeLabel::Success,
        );
        let b = track(
            &[(R::Approach, 3), (R::Transfer, 4), (R::Retract, 5)],
            &[(H::Idle, 2), (H::Approach, 3), (H::NotReleased, 7)],
            OutcomeLabel::NoRelease,
        );
        let table = CorrelationTable::fit([Some(&a), Some(&b)], false, "toy").unwrap();
        assert_eq!(table.counts, oracle_counts(&[a.clone(), b.clone()]));
        // hand count of trial b, transfer run of 4: positions 0..3 → deciles 0, 2, 5, 7
        assert_eq!(table.counts[1][5][H::NotReleased.index()], 1);
        let nominal = CorrelationTable::fit([Some(&a), Some(&b)], true, "toy").unwrap();
        assert_eq!(nominal.counts, oracle_counts(&[a]));
        assert!(matches!(CorrelationTable::fit([None], false, "x"), Err(Error::NoLabels(_))));
    }

    #[test]
    fn ties_and_fallback() {
        let mut table = CorrelationTable::empty("t");
        table.counts[1][3][H::Retract.index()] = 4;
        table.counts[1][3][H::Transfer.index()] = 4;
        table.counts[1][0][H::Dropped.index()] = 9;
        let robot = vec![RobotActionModel::Transfer; 10];
        let pred = table.predict(&robot);
        assert_eq!(pred[3], H::Transfer);
        assert_eq!(pred[0], H::Dropped);
        // empty cells fall back to the transfer marginal
        assert_eq!(pred[5], H::Dropped);
        // no data for approach at all → lowest index
        assert_eq!(table.predict(&[RobotActionModel::Approach]), vec![H::Idle]);
        assert_eq!(table.empty_cells().len(), 30 - 2);
    }

    #[test]
    fn perfect_predictions_score_100() {
        let t = track(
            &[(R::Approach, 10), (R::Transfer, 10), (R::Retract, 10)],
            &[(H::Approach, 10), (H::Transfer, 10), (H::Retract, 10)],
            OutcomeLabel::Success,
        );
        let table = CorrelationTable::fit([Some(&t)], false, "toy").unwrap();
        let r = evaluate_baseline(&table, [Some(&t)]).unwrap();
        assert_eq!(r.frame_accuracy.unwrap().mean, 100.0);
        assert_eq!(r.f1(50), Some(100.0));
    }

    #[test]
    fn json_round_trip() {
        let t = track(&[(R::Approach, 5), (R::Transfer, 5), (R::Retract, 5)], &[(H::Idle, 15)], OutcomeLabel::NoGrasp);
        let table = CorrelationTable::fit([Some(&t)], false, "train").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.json");
        table.save(&path).unwrap();
        assert_eq!(CorrelationTable::load(&path).unwrap(), table);
    }

    fn arb_track() -> impl Strategy<Value = AnnotationTrack> {
        (1usize..20, 1usize..20, 1usize..20, proptest::collection::vec(0usize..7, 60)).prop_map(|(a, b, c, h)| {
            let n = a + b + c;
            AnnotationTrack {
                robot_actions: [(R::Approach, a), (R::Transfer, b), (R::Retract, c)]
                    .iter()
                    .flat_map(|&(x, k)| std::iter::repeat_n(x, k))
                    .collect(),
                human_actions: h[..n].iter().map(|&i| H::ALL[i]).collect(),
                outcome: OutcomeLabel::Success,
            }
        })
    }

    proptest! {
        #[test]
        fn fit_matches_oracle_and_is_order_invariant(tracks in proptest::collection::vec(arb_track(), 1..6)) {
            let fwd = CorrelationTable::fit(tracks.iter().map(Some), false, "p").unwrap();
            let rev = CorrelationTable::fit(tracks.iter().rev().map(Some), false, "p").unwrap();
            prop_assert_eq!(&fwd, &rev);
            prop_assert_eq!(fwd.counts, oracle_counts(&tracks));
        }

        #[test]
        fn predictions_scale_invariant(tracks in proptest::collection::vec(arb_track(), 1..4), k in 1u64..50) {
            let table = CorrelationTable::fit(tracks.iter().map(Some), false, "p").unwrap();
            let mut scaled = table.clone();
            scaled.counts.iter_mut().flatten().flatten().for_each(|c| *c *= k);
            let robot = to_model_track(&tracks[0].robot_actions);
            let pred = table.predict(&robot);
            prop_assert_eq!(pred.len(), robot.len());
            prop_assert_eq!(&pred, &scaled.predict(&robot));
            // brute-force argmax oracle over the same cells
            let bins = progress_bins(&robot);
            for (i, r) in robot.iter().enumerate() {
                let cell = table.counts[r.index()][bins[i]];
                let max = *cell.iter().max().unwrap();
                if max > 0 {
                    let first = cell.iter().position(|&c| c == max).unwrap();
                    prop_assert_eq!(pred[i].index(), first);
                }
            }
        }
    }
}
