use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Wrench;
use crate::labels::RobotPlatform;

/// Per-channel F-T mean and standard deviation over a training pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl NormalizationStats {
    pub fn identity() -> Self {
        NormalizationStats { mean: [0.0; 6], std: [1.0; 6] }
    }
}

/// Pooled statistics over every frame of the given sequences. Population
/// standard deviation, so the pool itself normalizes to exactly unit spread.
/// Channels with zero spread get `std = 1` and a warning.
pub fn compute_ft_stats<'a, I>(pool: I) -> NormalizationStats
where
    I: IntoIterator<Item = &'a [Wrench]>,
{
    let mut n = 0usize;
    let mut sum = [0.0f64; 6];
    let seqs: Vec<&[Wrench]> = pool.into_iter().collect();
    for w in seqs.iter().flat_map(|s| s.iter()) {
        n += 1;
        for c in 0..6 {
            sum[c] += w[c];
        }
    }
    if n == 0 {
        log::warn!("empty F-T pool; using identity normalization");
        return NormalizationStats::identity();
    }
    let mean = sum.map(|s| s / n as f64);
    let mut var = [0.0f64; 6];
    for w in seqs.iter().flat_map(|s| s.iter()) {
        for c in 0..6 {
            let d = w[c] - mean[c];
            var[c] += d * d;
        }
    }
    let mut std = var.map(|v| (v / n as f64).sqrt());
    for (c, s) in std.iter_mut().enumerate() {
        if *s == 0.0 || !s.is_finite() {
            log::warn!("degenerate F-T channel {c}: zero spread, std forced to 1");
            *s = 1.0;
        }
    }
    NormalizationStats { mean, std }
}

pub fn compute_ft_stats_by_platform<'a, I>(pool: I) -> BTreeMap<RobotPlatform, NormalizationStats>
where
    I: IntoIterator<Item = (RobotPlatform, &'a [Wrench])>,
{
    let mut grouped: BTreeMap<RobotPlatform, Vec<&[Wrench]>> = BTreeMap::new();
    for (p, s) in pool {
        grouped.entry(p).or_default().push(s);
    }
    grouped.into_iter().map(|(p, v)| (p, compute_ft_stats(v))).collect()
}

pub fn normalize_ft(ft: &[Wrench], stats: &NormalizationStats) -> Vec<Wrench> {
    ft.iter().map(|w| std::array::from_fn(|c| (w[c] - stats.mean[c]) / stats.std[c])).collect()
}
