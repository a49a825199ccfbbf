use std::ops::Range;

use crate::error::{Error, Result};
use crate::features::{uniform_indices, FeatureSequence};
use crate::labels::RobotActionModel;

/// Frame ranges of the approach, transfer and retract phases.
pub fn model_segments(track: &[RobotActionModel]) -> Result<[Range<usize>; 3]> {
    let mut out: [Range<usize>; 3] = [0..0, 0..0, 0..0];
    for (k, action) in RobotActionModel::ALL.iter().enumerate() {
        let start = track.iter().position(|a| a == action).ok_or(Error::MissingSegment(action.as_str()))?;
        let end = track.iter().rposition(|a| a == action).expect("found above") + 1;
        if track[start..end].iter().any(|a| a != action) {
            return Err(Error::InvariantViolation(format!("{action} frames are not contiguous")));
        }
        out[k] = start..end;
    }
    if out[0].end != out[1].start || out[1].end != out[2].start || out[0].start != 0 || out[2].end != track.len() {
        return Err(Error::InvariantViolation("robot phases out of order".into()));
    }
    Ok(out)
}

/// Source frame of every resampled position: `len` per segment, chosen with
/// the same uniform rule as classifier clips.
pub fn resample_indices(segments: &[Range<usize>; 3], len: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(3 * len);
    for seg in segments {
        out.extend(uniform_indices(seg.len(), len)?.into_iter().map(|i| seg.start + i));
    }
    Ok(out)
}

/// For every original frame, the resampled position whose source frame is
/// nearest within the same segment (earlier position on ties).
pub fn inverse_indices(segments: &[Range<usize>; 3], len: usize) -> Result<Vec<usize>> {
    let forward = resample_indices(segments, len)?;
    let mut out = Vec::with_capacity(segments[2].end);
    for (k, seg) in segments.iter().enumerate() {
        let block = &forward[k * len..(k + 1) * len];
        // sources in a block are non-decreasing; first position holding a value
        let first = |v: usize| block.partition_point(|&x| x < v);
        for t in seg.clone() {
            let hi = first(t);
            let j = if hi == len {
                first(block[len - 1])
            } else if hi == 0 || block[hi] == t {
                hi
            } else {
                let lo = first(block[hi - 1]);
                if block[lo].abs_diff(t) <= block[hi].abs_diff(t) {
                    lo
                } else {
                    hi
                }
            };
            out.push(k * len + j);
        }
    }
    Ok(out)
}

/// Resample each robot phase of `features` to exactly `len` frames.
/// Labels follow the same indices.
pub fn resample_per_robot_action(
    features: &FeatureSequence,
    robot_track: &[RobotActionModel],
    len: usize,
) -> Result<FeatureSequence> {
    if robot_track.len() != features.len() {
        return Err(Error::LengthMismatch(robot_track.len(), features.len()));
    }
    let segments = model_segments(robot_track)?;
    Ok(features.select(&resample_indices(&segments, len)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use RobotActionModel::*;

    fn track(lens: [usize; 3]) -> Vec<RobotActionModel> {
        RobotActionModel::ALL.iter().zip(lens).flat_map(|(&a, n)| std::iter::repeat_n(a, n)).collect()
    }

    /// Brute force: pick the source frame whose position in the segment is
    /// closest to the real-valued linspace point, larger one on exact halves.
    fn oracle_indices(lens: [usize; 3], l: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut start = 0;
        for n in lens {
            for i in 0..l {
                let x = if l == 1 { 0.0 } else { i as f64 * (n - 1) as f64 / (l - 1) as f64 };
                let mut best = 0;
                for cand in 0..n {
                    let d = (cand as f64 - x).abs();
                    let bd = (best as f64 - x).abs();
                    if d < bd - 1e-12 || ((d - bd).abs() <= 1e-12 && cand > best) {
                        best = cand;
                    }
                }
                out.push(start + best);
            }
            start += n;
        }
        out
    }

    fn oracle_inverse(forward: &[usize], lens: [usize; 3], l: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut start = 0;
        for (k, n) in lens.into_iter().enumerate() {
            for t in start..start + n {
                let mut best = k * l;
                for j in k * l..(k + 1) * l {
                    if forward[j].abs_diff(t) < forward[best].abs_diff(t) {
                        best = j;
                    }
                }
                out.push(best);
            }
            start += n;
        }
        out
    }

    #[test]
    fn segments_found() {
        let s = model_segments(&track([3, 4, 2])).unwrap();
        assert_eq!(s, [0..3, 3..7, 7..9]);
        assert!(matches!(model_segments(&track([3, 0, 2])), Err(Error::MissingSegment("transfer"))));
        assert!(model_segments(&[Approach, Transfer, Approach, Retract]).is_err());
        assert!(model_segments(&[Transfer, Approach, Retract]).is_err());
    }

    #[test]
    fn equal_lengths_are_identity() {
        let s = model_segments(&track([100, 100, 100])).unwrap();
        let fwd = resample_indices(&s, 100).unwrap();
        assert_eq!(fwd, (0..300).collect::<Vec<_>>());
        assert_eq!(inverse_indices(&s, 100).unwrap(), fwd);
    }

    #[test]
    fn uneven_segments_match_oracle() {
        let lens = [50, 200, 10];
        let s = model_segments(&track(lens)).unwrap();
        let fwd = resample_indices(&s, 100).unwrap();
        assert_eq!(fwd.len(), 300);
        assert_eq!(fwd, oracle_indices(lens, 100));
        let inv = inverse_indices(&s, 100).unwrap();
        assert_eq!(inv.len(), 260);
        assert_eq!(inv, oracle_inverse(&fwd, lens, 100));
    }

    proptest! {
        #[test]
        fn round_trip_random(a in 1usize..150, b in 1usize..150, c in 1usize..150, l in 1usize..120) {
            let lens = [a, b, c];
            let s = model_segments(&track(lens)).unwrap();
            let fwd = resample_indices(&s, l).unwrap();
            prop_assert_eq!(&fwd, &oracle_indices(lens, l));
            let inv = inverse_indices(&s, l).unwrap();
            prop_assert_eq!(&inv, &oracle_inverse(&fwd, lens, l));
            // every original frame maps to a resampled position within its own phase
            for (t, &j) in inv.iter().enumerate() {
                let k = j / l;
                prop_assert!(s[k].contains(&t));
            }
            // frames that were sampled map back to a position sampling them
            for (j, &src) in fwd.iter().enumerate() {
                prop_assert_eq!(fwd[inv[src]], fwd[j]);
            }
        }
    }
}
