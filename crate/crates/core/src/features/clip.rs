use image::RgbImage;

use crate::dataset::{AlignedTrial, Wrench};
use crate::error::{Error, Result};
use crate::labels::OutcomeLabel;

/// Temporal length of a classifier clip.
pub const CLIP_LEN: usize = 64;

/// `n` indices spread evenly over `[0, len)`: `round(i·(len−1)/(n−1))`.
/// Indices repeat when `len < n`.
pub fn uniform_indices(len: usize, n: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::EmptyTrial);
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    let span = (len - 1) as u64;
    let denom = (n - 1) as u64;
    // exact integer rounding of i·span/denom, halves rounded up
    Ok((0..n as u64).map(|i| ((2 * i * span + denom) / (2 * denom)) as usize).collect())
}

/// Streams of one classifier input, all indexing the same source frames.
#[derive(Debug, Clone)]
pub struct ClipInput {
    pub indices: Vec<usize>,
    pub rgb: Vec<RgbImage>,
    pub ft: Vec<Wrench>,
    pub gripper: Vec<f64>,
    pub label: Option<OutcomeLabel>,
}

/// Sample `n` evenly spaced frames together with their F-T and gripper values.
/// The F-T values are taken as stored in `trial` (normalize beforehand).
pub fn sample_uniform_clip(trial: &AlignedTrial, n: usize) -> Result<ClipInput> {
    let indices = uniform_indices(trial.len(), n)?;
    let rgb = indices.iter().map(|&i| trial.frames.frame(i)).collect::<Result<Vec<_>>>()?;
    Ok(ClipInput {
        rgb,
        ft: indices.iter().map(|&i| trial.ft[i]).collect(),
        gripper: indices.iter().map(|&i| trial.gripper[i]).collect(),
        label: trial.labels.as_ref().map(|l| l.outcome),
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linspace_round(len: usize, n: usize) -> Vec<usize> {
        (0..n)
            .map(|i| {
                let x = i as f64 * (len - 1) as f64 / (n - 1) as f64;
                // round half up, as the integer implementation does
                (x + 0.5).floor() as usize
            })
            .collect()
    }

    #[test]
    fn identity_when_len_equals_n() {
        assert_eq!(uniform_indices(64, 64).unwrap(), (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn matches_linspace_oracle() {
        for (len, n) in [(127, 64), (1000, 64), (65, 64), (3, 2), (200, 100)] {
            assert_eq!(uniform_indices(len, n).unwrap(), linspace_round(len, n), "len={len} n={n}");
        }
    }

    #[test]
    fn short_video_repeats() {
        let idx = uniform_indices(10, 64).unwrap();
        assert_eq!(idx.len(), 64);
        assert_eq!(*idx.iter().min().unwrap(), 0);
        assert_eq!(*idx.iter().max().unwrap(), 9);
        assert!(idx.windows(2).any(|w| w[0] == w[1]));
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(uniform_indices(0, 64), Err(Error::EmptyTrial)));
    }

    proptest! {
        #[test]
        fn monotone_and_spanning(len in 2usize..2000, n in 2usize..200) {
            let idx = uniform_indices(len, n).unwrap();
            prop_assert_eq!(idx.len(), n);
            prop_assert_eq!(idx[0], 0);
            prop_assert_eq!(*idx.last().unwrap(), len - 1);
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
