use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{MstcnConfig, SegmentationOutput};
use crate::error::{Error, Result};

/// Gradients (or upstream values) for the three heads of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub human: Array2<f64>,
    pub outcome: Array2<f64>,
    pub robot: Option<Array2<f64>>,
}

/// Frame-level class indices for each supervised head.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Targets {
    pub human: Option<Vec<usize>>,
    pub robot: Option<Vec<usize>>,
    /// Trial outcome, supervised at every frame.
    pub outcome: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub outcome: f64,
    pub human_cls: f64,
    pub human_smooth: f64,
    pub robot_cls: f64,
    pub robot_smooth: f64,
    pub total: f64,
}

/// Sum over stages of the mean negative log-probability of the target class.
pub fn loss_segcls(stages: &[&Array2<f64>], target: &[usize]) -> f64 {
    stages
        .iter()
        .map(|lp| {
            let t = lp.nrows();
            -target.iter().enumerate().map(|(i, &c)| lp[[i, c]]).sum::<f64>() / t as f64
        })
        .sum()
}

fn segcls_grad(lp: &Array2<f64>, target: &[usize]) -> Array2<f64> {
    let mut g = Array2::zeros(lp.raw_dim());
    let w = -1.0 / lp.nrows() as f64;
    for (i, &c) in target.iter().enumerate() {
        g[[i, c]] = w;
    }
    g
}

/// Consecutive-frame log-probability difference; equal values (including
/// two `-inf`s) give zero.
#[inline]
fn delta(cur: f64, prev: f64) -> f64 {
    if cur == prev {
        0.0
    } else {
        cur - prev
    }
}

/// Sum over stages of `Σ min(|Δ log p|, τ)² / (T·C)`.
pub fn loss_smooth(stages: &[&Array2<f64>], tau: f64) -> f64 {
    stages
        .iter()
        .map(|lp| {
            let (t, c) = lp.dim();
            let mut acc = 0.0;
            for i in 1..t {
                for k in 0..c {
                    let d = delta(lp[[i, k]], lp[[i - 1, k]]).abs().min(tau);
                    acc += d * d;
                }
            }
            acc / (t * c) as f64
        })
        .sum()
}

fn smooth_grad(lp: &Array2<f64>, tau: f64, detach_previous: bool) -> Array2<f64> {
    let (t, c) = lp.dim();
    let mut g = Array2::zeros((t, c));
    let norm = (t * c) as f64;
    for i in 1..t {
        for k in 0..c {
            let d = delta(lp[[i, k]], lp[[i - 1, k]]);
            if d.abs() < tau {
                let v = 2.0 * d / norm;
                g[[i, k]] += v;
                if !detach_previous {
                    g[[i - 1, k]] -= v;
                }
            }
        }
    }
    g
}

fn check_target(name: &'static str, track: &[usize], frames: usize, classes: usize) -> Result<()> {
    if track.len() != frames {
        return Err(Error::LengthMismatch(track.len(), frames));
    }
    if let Some(&bad) = track.iter().find(|&&c| c >= classes) {
        return Err(Error::InvariantViolation(format!("{name} target {bad} out of range")));
    }
    Ok(())
}

/// Outcome cross-entropy (all frames, all stages) plus the human and, when
/// active, robot segmentation losses with their smoothing terms. Returns the
/// loss and its gradient w.r.t. every stage's log-probabilities.
pub fn loss_total(
    out: &SegmentationOutput,
    targets: &Targets,
    config: &MstcnConfig,
) -> Result<(LossBreakdown, Vec<HeadGrads>)> {
    let t = out.len();
    let outcome = targets.outcome.ok_or(Error::MissingTarget("outcome"))?;
    let outcome_track = vec![outcome; t];
    check_target("outcome", &outcome_track, t, out.last().outcome.ncols())?;

    let mut grads: Vec<HeadGrads> = out
        .stages
        .iter()
        .map(|s| HeadGrads {
            outcome: segcls_grad(&s.outcome, &outcome_track),
            human: Array2::zeros(s.human.raw_dim()),
            robot: s.robot.as_ref().map(|r| Array2::zeros(r.raw_dim())),
        })
        .collect();
    let mut b = LossBreakdown {
        outcome: loss_segcls(&out.stages.iter().map(|s| &s.outcome).collect::<Vec<_>>(), &outcome_track),
        ..LossBreakdown::default()
    };

    if config.heads.human {
        let target = targets.human.as_ref().ok_or(Error::MissingTarget("human"))?;
        check_target("human", target, t, out.last().human.ncols())?;
        let lps: Vec<&Array2<f64>> = out.stages.iter().map(|s| &s.human).collect();
        b.human_cls = loss_segcls(&lps, target);
        b.human_smooth = loss_smooth(&lps, config.tau);
        for (g, lp) in grads.iter_mut().zip(&lps) {
            g.human += &segcls_grad(lp, target);
            g.human.scaled_add(config.lambda, &smooth_grad(lp, config.tau, config.detach_previous));
        }
    }

    if config.has_robot_head() {
        let target = targets.robot.as_ref().ok_or(Error::MissingTarget("robot"))?;
        let lps: Vec<&Array2<f64>> = out
            .stages
            .iter()
            .map(|s| s.robot.as_ref().ok_or(Error::ShapeError("model has no robot head".into())))
            .collect::<Result<_>>()?;
        check_target("robot", target, t, lps[0].ncols())?;
        b.robot_cls = loss_segcls(&lps, target);
        b.robot_smooth = loss_smooth(&lps, config.tau);
        for (g, lp) in grads.iter_mut().zip(&lps) {
            let gr = g.robot.as_mut().expect("robot head present");
            *gr += &segcls_grad(lp, target);
            gr.scaled_add(config.lambda, &smooth_grad(lp, config.tau, config.detach_previous));
        }
    }

    b.total = b.outcome + b.human_cls + config.lambda * b.human_smooth + b.robot_cls + config.lambda * b.robot_smooth;
    Ok((b, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modality::Modalities;
    use crate::nn::{log_softmax_rows, seeded_rng};
    use crate::segmentation::{ActiveHeads, MstcnVariant, StageOutput};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_logp(t: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded_rng(seed);
        log_softmax_rows(&Array2::from_shape_simple_fn((t, c), || rng.gen_range(-3.0..3.0)))
    }

    fn naive_segcls(stages: &[Array2<f64>], target: &[usize]) -> f64 {
        let mut total = 0.0;
        for lp in stages {
            let mut s = 0.0;
            for t in 0..lp.nrows() {
                for c in 0..lp.ncols() {
                    if c == target[t] {
                        s -= lp[[t, c]];
                    }
                }
            }
            total += s / lp.nrows() as f64;
        }
        total
    }

    fn naive_smooth(stages: &[Array2<f64>], tau: f64) -> f64 {
        let mut total = 0.0;
        for lp in stages {
            let (t, c) = lp.dim();
            let mut s = 0.0;
            for i in 1..t {
                for k in 0..c {
                    let d = (lp[[i - 1, k]] - lp[[i, k]]).abs();
                    let d = if d > tau { tau } else { d };
                    s += d * d;
                }
            }
            total += s / (t as f64 * c as f64);
        }
        total
    }

    #[test]
    fn uniform_predictions_two_stages() {
        let lp = Array2::from_elem((13, 7), -(7f64).ln());
        let v = loss_segcls(&[&lp, &lp], &[3; 13]);
        assert!((v - 2.0 * 7f64.ln()).abs() < 1e-9);
        assert!((v - 3.8918).abs() < 1e-4);
        assert_eq!(loss_smooth(&[&lp, &lp], 4.0), 0.0);
    }

    #[test]
    fn perfect_one_hot_is_zero() {
        let target = [0usize, 0, 2, 2, 1];
        let mut lp = Array2::from_elem((5, 3), f64::NEG_INFINITY);
        for (t, &c) in target.iter().enumerate() {
            lp[[t, c]] = 0.0;
        }
        assert_eq!(loss_segcls(&[&lp], &target), 0.0);
        let constant = Array2::from_shape_fn((5, 3), |(_, c)| if c == 1 { 0.0 } else { f64::NEG_INFINITY });
        assert_eq!(loss_smooth(&[&constant], 4.0), 0.0);
    }

    #[test]
    fn truncation_cap() {
        let (t, c) = (6, 3);
        let mut lp: Array2<f64> = Array2::zeros((t, c));
        lp[[3, 1]] = -10.0;
        lp[[4, 1]] = -10.0;
        // one jump of 10 into frame 3 and one back out at frame 5
        let v = loss_smooth(&[&lp], 4.0);
        assert!((v - 2.0 * 16.0 / (t * c) as f64).abs() < 1e-12);
        let single = {
            let mut x = Array2::zeros((t, c));
            x[[t - 1, 1]] = -10.0;
            loss_smooth(&[&x], 4.0)
        };
        assert!((single - 16.0 / (t * c) as f64).abs() < 1e-12);
    }

    #[test]
    fn random_cases_match_naive_loops() {
        for seed in 0..20 {
            let stages = vec![random_logp(17, 7, seed), random_logp(17, 7, seed + 100)];
            let mut rng = seeded_rng(seed);
            let target: Vec<usize> = (0..17).map(|_| rng.gen_range(0..7)).collect();
            let refs: Vec<&Array2<f64>> = stages.iter().collect();
            assert!((loss_segcls(&refs, &target) - naive_segcls(&stages, &target)).abs() < 1e-10);
            for tau in [0.5, 1.0, 4.0] {
                assert!((loss_smooth(&refs, tau) - naive_smooth(&stages, tau)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_frame_smooth_is_zero() {
        assert_eq!(loss_smooth(&[&random_logp(1, 7, 3)], 4.0), 0.0);
    }

    fn output(t: usize, robot: bool, seed: u64) -> SegmentationOutput {
        SegmentationOutput {
            stages: (0..2)
                .map(|s| StageOutput {
                    human: random_logp(t, 7, seed + s),
                    outcome: random_logp(t, 5, seed + 10 + s),
                    robot: robot.then(|| random_logp(t, 3, seed + 20 + s)),
                })
                .collect(),
        }
    }

    fn targets(t: usize) -> Targets {
        Targets {
            human: Some((0..t).map(|i| i * 7 / t).collect()),
            robot: Some((0..t).map(|i| i * 3 / t).collect()),
            outcome: Some(2),
        }
    }

    #[test]
    fn robot_head_is_additive() {
        let t = 12;
        let out = output(t, true, 5);
        let cfg_b = MstcnConfig::new(MstcnVariant::B, Modalities::ALL, ActiveHeads::ALL);
        let cfg_h = MstcnConfig::new(MstcnVariant::B, Modalities::ALL, ActiveHeads::HUMAN);
        let (full, _) = loss_total(&out, &targets(t), &cfg_b).unwrap();
        let (human_only, _) = loss_total(&out, &targets(t), &cfg_h).unwrap();
        let robot: Vec<&Array2<f64>> = out.stages.iter().map(|s| s.robot.as_ref().unwrap()).collect();
        let robot_term = loss_segcls(&robot, targets(t).robot.as_ref().unwrap()) + 0.15 * loss_smooth(&robot, 4.0);
        assert!((full.total - (human_only.total + robot_term)).abs() < 1e-12);
        let recomputed = human_only.outcome + human_only.human_cls + 0.15 * human_only.human_smooth;
        assert_eq!(human_only.total, recomputed);
    }

    #[test]
    fn missing_targets() {
        let out = output(8, true, 1);
        let cfg = MstcnConfig::new(MstcnVariant::B, Modalities::ALL, ActiveHeads::ALL);
        let mut tg = targets(8);
        tg.robot = None;
        assert!(matches!(loss_total(&out, &tg, &cfg), Err(Error::MissingTarget("robot"))));
        tg = targets(8);
        tg.outcome = None;
        assert!(matches!(loss_total(&out, &tg, &cfg), Err(Error::MissingTarget("outcome"))));
        let cls_only = MstcnConfig::new(MstcnVariant::A, Modalities::ALL, ActiveHeads::CLS_ONLY);
        let tg = Targets { outcome: Some(0), ..Targets::default() };
        assert!(loss_total(&output(8, false, 1), &tg, &cls_only).is_ok());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let t = 9;
        let out = output(t, true, 2);
        let tg = targets(t);
        let mut cfg = MstcnConfig::new(MstcnVariant::B, Modalities::ALL, ActiveHeads::ALL);
        cfg.tau = 1.0;
        let (_, grads) = loss_total(&out, &tg, &cfg).unwrap();
        let eps = 1e-6;
        for s in 0..2 {
            for (r, c) in [(0, 0), (4, 3), (8, 6), (3, 1)] {
                let mut p = out.clone();
                p.stages[s].human[[r, c]] += eps;
                let mut m = out.clone();
                m.stages[s].human[[r, c]] -= eps;
                let num = (loss_total(&p, &tg, &cfg).unwrap().0.total - loss_total(&m, &tg, &cfg).unwrap().0.total)
                    / (2.0 * eps);
                assert!((num - grads[s].human[[r, c]]).abs() < 1e-6, "stage {s} ({r},{c})");
            }
        }
    }

    proptest! {
        #[test]
        fn smooth_reversal_invariant_and_capped(seed in 0u64..500, t in 2usize..30, scale in 0.1f64..100.0) {
            let mut rng = seeded_rng(seed);
            let lp = Array2::from_shape_simple_fn((t, 4), || -rng.gen_range(0.0..scale));
            let rev = lp.slice(ndarray::s![..;-1, ..]).to_owned();
            let a = loss_smooth(&[&lp], 4.0);
            prop_assert!((a - loss_smooth(&[&rev], 4.0)).abs() < 1e-12);
            prop_assert!(a >= 0.0);
            prop_assert!(a <= 16.0 * (t - 1) as f64 / t as f64 + 1e-12);
        }

        #[test]
        fn segcls_permutation_invariant(seed in 0u64..500, t in 1usize..30) {
            let lp = random_logp(t, 7, seed);
            let mut rng = seeded_rng(seed + 1);
            let target: Vec<usize> = (0..t).map(|_| rng.gen_range(0..7)).collect();
            let mut order: Vec<usize> = (0..t).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let plp = lp.select(ndarray::Axis(0), &order);
            let ptarget: Vec<usize> = order.iter().map(|&i| target[i]).collect();
            let a = loss_segcls(&[&lp], &target);
            prop_assert!((a - loss_segcls(&[&plp], &ptarget)).abs() < 1e-10);
            prop_assert!(a >= 0.0);
        }
    }
}
