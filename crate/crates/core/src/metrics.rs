//! Outcome accuracy, frame-wise accuracy, segmental F1 and multi-run
//! aggregation. Percent values are in [0, 100].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Overlap thresholds (percent) reported for segmental F1.
pub const F1_THRESHOLDS: [u32; 3] = [10, 25, 50];

/// A maximal run of one label, `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iou(&self, other: &Segment) -> f64 {
        let inter = (self.end.min(other.end) as isize - self.start.max(other.start) as isize + 1).max(0);
        let union = self.end.max(other.end) - self.start.min(other.start) + 1;
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentList {
    pub segments: Vec<Segment>,
}

impl SegmentList {
    /// Number of frames covered.
    pub fn frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end + 1)
    }

    pub fn to_track(&self) -> Vec<usize> {
        self.segments.iter().flat_map(|s| std::iter::repeat_n(s.label, s.len())).collect()
    }
}

pub fn frames_to_segments(track: &[usize]) -> Result<SegmentList> {
    if track.is_empty() {
        return Err(Error::EmptyTrack);
    }
    let mut segments: Vec<Segment> = Vec::new();
    for (i, &label) in track.iter().enumerate() {
        match segments.last_mut() {
            Some(s) if s.label == label => s.end = i,
            _ => segments.push(Segment { label, start: i, end: i }),
        }
    }
    Ok(SegmentList { segments })
}

/// True positives, false positives and false negatives at one overlap
/// threshold (fraction in [0, 1]).
///
/// Predicted segments are visited in order; each is matched to the unmatched
/// same-label ground-truth segment of highest IoU (lowest index on ties) and
/// counts as a true positive if that IoU reaches the threshold.
pub fn segment_counts(pred: &SegmentList, gt: &SegmentList, overlap: f64) -> Result<(usize, usize, usize)> {
    if pred.frames() != gt.frames() {
        return Err(Error::LengthMismatch(pred.frames(), gt.frames()));
    }
    Ok(match_segments(&pred.segments, &gt.segments, overlap))
}

fn match_segments(pred: &[Segment], gt: &[Segment], overlap: f64) -> (usize, usize, usize) {
    let mut matched = vec![false; gt.len()];
    let (mut tp, mut fp) = (0, 0);
    for p in pred {
        let best =
            gt.iter().enumerate().filter(|(j, g)| g.label == p.label && !matched[*j]).map(|(j, g)| (j, p.iou(g))).fold(
                None,
                |acc: Option<(usize, f64)>, (j, iou)| match acc {
                    Some((_, b)) if b >= iou => acc,
                    _ => Some((j, iou)),
                },
            );
        match best {
            Some((j, iou)) if iou >= overlap => {
                matched[j] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    let fn_ = matched.iter().filter(|m| !**m).count();
    (tp, fp, fn_)
}

/// F1 (percent) from pooled counts.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        return 100.0;
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    100.0 * 2.0 * precision * recall / (precision + recall)
}

/// Segmental F1 at `threshold` percent overlap.
pub fn segmental_f1(pred: &SegmentList, gt: &SegmentList, threshold: f64) -> Result<f64> {
    let (tp, fp, fn_) = segment_counts(pred, gt, threshold / 100.0)?;
    Ok(f1_from_counts(tp, fp, fn_))
}

pub fn frame_accuracy<L: PartialEq>(pred: &[L], gt: &[L]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptyTrack);
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

pub fn outcome_accuracy<L: PartialEq>(preds: &[L], gts: &[L]) -> Result<f64> {
    frame_accuracy(preds, gts)
}

/// Dataset-level segmentation metrics: counts and frames pooled over all
/// trials before computing F1 and accuracy.
#[derive(Debug, Clone, Default)]
pub struct SegmentationTally {
    counts: [(usize, usize, usize); 3],
    correct: usize,
    total: usize,
    excluded: Vec<usize>,
}

impl SegmentationTally {
    /// Segments of the `excluded` labels (e.g. idle) are dropped from both
    /// tracks before F1 matching. Frame accuracy still covers every frame.
    pub fn excluding(excluded: &[usize]) -> Self {
        SegmentationTally { excluded: excluded.to_vec(), ..Default::default() }
    }

    pub fn add(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::LengthMismatch(pred.len(), gt.len()));
        }
        let keep = |l: SegmentList| -> Vec<Segment> {
            l.segments.into_iter().filter(|s| !self.excluded.contains(&s.label)).collect()
        };
        let p = keep(frames_to_segments(pred)?);
        let g = keep(frames_to_segments(gt)?);
        for (k, &thr) in F1_THRESHOLDS.iter().enumerate() {
            let (tp, fp, fn_) = match_segments(&p, &g, thr as f64 / 100.0);
            self.counts[k].0 += tp;
            self.counts[k].1 += fp;
            self.counts[k].2 += fn_;
        }
        self.correct += pred.iter().zip(gt).filter(|(a, b)| a == b).count();
        self.total += gt.len();
        Ok(())
    }

    pub fn f1(&self) -> [f64; 3] {
        self.counts.map(|(tp, fp, fn_)| f1_from_counts(tp, fp, fn_))
    }

    pub fn frame_accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

/// Mean and (sample) standard deviation of one metric over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl Stat {
    pub fn single(v: f64) -> Self {
        Stat { mean: v, std: None }
    }

    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyList);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std =
            (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Ok(Stat { mean, std })
    }

    /// `mean ± std` with one decimal.
    pub fn display(&self) -> String {
        match self.std {
            Some(s) => format!("{:.1} ± {:.1}", self.mean, s),
            None => format!("{:.1}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_accuracy: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_accuracy: Option<Stat>,
    /// Keyed by threshold percent.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub f1_at: BTreeMap<u32, Stat>,
    pub n_runs: usize,
}

impl MetricsReport {
    pub fn single(outcome_accuracy: Option<f64>, segmentation: Option<&SegmentationTally>) -> Self {
        MetricsReport {
            outcome_accuracy: outcome_accuracy.map(Stat::single),
            frame_accuracy: segmentation.map(|s| Stat::single(s.frame_accuracy())),
            f1_at: segmentation
                .map(|s| F1_THRESHOLDS.iter().zip(s.f1()).map(|(&k, v)| (k, Stat::single(v))).collect())
                .unwrap_or_default(),
            n_runs: 1,
        }
    }

    pub fn f1(&self, threshold: u32) -> Option<f64> {
        self.f1_at.get(&threshold).map(|s| s.mean)
    }
}

/// Per-field mean and sample standard deviation over runs.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::EmptyList);
    }
    let collect = |get: &dyn Fn(&MetricsReport) -> Option<f64>| -> Result<Option<Stat>> {
        let vals: Vec<f64> = reports.iter().filter_map(get).collect();
        if vals.is_empty() {
            Ok(None)
        } else {
            Stat::of(&vals).map(Some)
        }
    };
    let mut f1_at = BTreeMap::new();
    for thr in reports.iter().flat_map(|r| r.f1_at.keys().copied()).collect::<std::collections::BTreeSet<_>>() {
        if let Some(s) = collect(&|r| r.f1(thr))? {
            f1_at.insert(thr, s);
        }
    }
    Ok(MetricsReport {
        outcome_accuracy: collect(&|r| r.outcome_accuracy.map(|s| s.mean))?,
        frame_accuracy: collect(&|r| r.frame_accuracy.map(|s| s.mean))?,
        f1_at,
        n_runs: reports.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn segs(track: &[usize]) -> SegmentList {
        frames_to_segments(track).unwrap()
    }

    #[test]
    fn run_length_examples() {
        let s = segs(&[0, 0, 1]);
        assert_eq!(s.segments, vec![Segment { label: 0, start: 0, end: 1 }, Segment { label: 1, start: 2, end: 2 }]);
        assert_eq!(segs(&[3; 5]).segments, vec![Segment { label: 3, start: 0, end: 4 }]);
        assert!(matches!(frames_to_segments(&[]), Err(Error::EmptyTrack)));
    }

    #[test]
    fn identical_tracks_score_100() {
        let t = [0, 0, 1, 1, 1, 2, 0, 0];
        for thr in [10.0, 25.0, 50.0] {
            assert_eq!(segmental_f1(&segs(&t), &segs(&t), thr).unwrap(), 100.0);
        }
    }

    #[test]
    fn excluded_labels_leave_f1_but_not_accuracy() {
        // label 0 is background: a wrong idle segment no longer costs F1
        let gt = [0, 0, 1, 1, 1, 0, 0, 0];
        let pred = [0, 0, 1, 1, 1, 2, 0, 0];
        let mut all = SegmentationTally::default();
        all.add(&pred, &gt).unwrap();
        let mut fg = SegmentationTally::excluding(&[0]);
        fg.add(&pred, &gt).unwrap();
        assert!(all.f1()[2] < 100.0);
        // foreground: pred {1, 2}, gt {1} -> tp 1, fp 1, fn 0
        assert!((fg.f1()[2] - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(fg.frame_accuracy(), all.frame_accuracy());
        let mut only_bg = SegmentationTally::excluding(&[0]);
        only_bg.add(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(only_bg.f1(), [100.0; 3]);
    }

    #[test]
    fn half_split_at_fifty() {
        let gt = segs(&[0, 0, 0, 0]);
        let pred = segs(&[0, 0, 1, 1]);
        assert_eq!(segment_counts(&pred, &gt, 0.5).unwrap(), (1, 1, 0));
        let f1 = segmental_f1(&pred, &gt, 50.0).unwrap();
        assert!((f1 - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(segmental_f1(&segs(&[0, 1]), &segs(&[0]), 10.0), Err(Error::LengthMismatch(2, 1))));
        assert!(frame_accuracy(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(frame_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        assert_eq!(frame_accuracy(&[1, 1], &[2, 2]).unwrap(), 0.0);
        assert_eq!(frame_accuracy(&[1, 1, 2, 2], &[1, 1, 3, 3]).unwrap(), 50.0);
    }

    #[test]
    fn aggregate_examples() {
        let one = MetricsReport::single(Some(60.0), None);
        let agg = aggregate_runs(std::slice::from_ref(&one)).unwrap();
        assert_eq!(agg.outcome_accuracy, Some(Stat { mean: 60.0, std: None }));
        let two = aggregate_runs(&[one, MetricsReport::single(Some(70.0), None)]).unwrap();
        let s = two.outcome_accuracy.unwrap();
        assert_eq!(s.mean, 65.0);
        assert!((s.std.unwrap() - 50f64.sqrt()).abs() < 1e-12);
        assert!(matches!(aggregate_runs(&[]), Err(Error::EmptyList)));
    }

    fn track_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..40)
            .prop_flat_map(|t| (proptest::collection::vec(0usize..4, t), proptest::collection::vec(0usize..4, t)))
    }

    proptest! {
        #[test]
        fn segments_round_trip(track in proptest::collection::vec(0usize..5, 1..60)) {
            let s = segs(&track);
            prop_assert_eq!(s.to_track(), track);
            prop_assert!(s.segments.windows(2).all(|w| w[0].label != w[1].label));
        }

        #[test]
        fn f1_non_increasing_in_threshold((p, g) in track_strategy()) {
            let (p, g) = (segs(&p), segs(&g));
            let mut last = f64::INFINITY;
            for thr in [0.0, 10.0, 25.0, 50.0, 75.0, 100.0] {
                let f = segmental_f1(&p, &g, thr).unwrap();
                prop_assert!(f <= last + 1e-12);
                last = f;
            }
        }

        #[test]
        fn f1_invariant_under_relabeling((p, g) in track_strategy(), perm in Just([2usize, 0, 3, 1])) {
            let base = segmental_f1(&segs(&p), &segs(&g), 25.0).unwrap();
            let rp: Vec<usize> = p.iter().map(|&l| perm[l]).collect();
            let rg: Vec<usize> = g.iter().map(|&l| perm[l]).collect();
            prop_assert_eq!(base, segmental_f1(&segs(&rp), &segs(&rg), 25.0).unwrap());
        }

        #[test]
        fn frame_accuracy_permutation_invariant((p, g) in track_strategy(), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.shuffle(&mut crate::nn::seeded_rng(seed));
            let pp: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
            let gg: Vec<usize> = idx.iter().map(|&i| g[i]).collect();
            prop_assert_eq!(frame_accuracy(&p, &g).unwrap(), frame_accuracy(&pp, &gg).unwrap());
        }
    }
}
