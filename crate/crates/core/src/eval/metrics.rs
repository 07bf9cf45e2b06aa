//! Ranking, key and tempo metrics.

use crate::corpus::KEY_CLASSES;
use crate::error::{Error, Result};

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} labels", scores.len()),
            actual: format!("{}", labels.len()),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("both classes must be present".into()));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outranks a random negative, ties ½.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut neg_below = neg as f64;
    let mut wins = 0.0;
    for g in tie_groups(scores) {
        let gp = g.iter().filter(|&&i| labels[i]).count() as f64;
        let gn = g.len() as f64 - gp;
        neg_below -= gn;
        wins += gp * (neg_below + 0.5 * gn);
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Step-interpolated area under the precision-recall curve; tied scores
/// form a single threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_binary(scores, labels)?;
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    for g in tie_groups(scores) {
        let gp = g.iter().filter(|&&i| labels[i]).count();
        tp += gp;
        seen += g.len();
        ap += gp as f64 / pos as f64 * (tp as f64 / seen as f64);
    }
    Ok(ap)
}

/// Weighted key score. Keys 0..12 are major tonics C..B, 12..24 minor.
pub fn key_weighted(pred: u8, truth: u8) -> Result<f64> {
    for (name, k) in [("pred_key", pred), ("true_key", truth)] {
        if k as usize >= KEY_CLASSES {
            return Err(Error::param(name, format!("key index {k} out of range")));
        }
    }
    let (pt, pm) = (pred % 12, pred / 12);
    let (tt, tm) = (truth % 12, truth / 12);
    let up = (pt + 12 - tt) % 12;
    Ok(if pred == truth {
        1.0
    } else if pm == tm && up == 7 {
        0.5
    } else if pm != tm && ((tm == 0 && up == 9) || (tm == 1 && up == 3)) {
        0.3
    } else if pm != tm && pt == tt {
        0.2
    } else {
        0.0
    })
}

const TEMPO_TOLERANCE: f64 = 0.04;
const TEMPO_RATIOS: [f64; 5] = [1.0, 2.0, 3.0, 0.5, 1.0 / 3.0];

/// acc1: within 4% of the truth. acc2: within 4% of truth × {1, 2, 3, ½, ⅓}.
pub fn tempo_acc(pred_bpm: f64, true_bpm: f64, level: u8) -> Result<f64> {
    if !(pred_bpm > 0.0 && true_bpm > 0.0) {
        return Err(Error::param("bpm", "tempi must be positive"));
    }
    let hit = |t: f64| ((pred_bpm - t).abs() / t) <= TEMPO_TOLERANCE + 1e-12;
    let ok = match level {
        1 => hit(true_bpm),
        2 => TEMPO_RATIOS.iter().any(|r| hit(true_bpm * r)),
        _ => return Err(Error::param("level", "tempo accuracy level must be 1 or 2")),
    };
    Ok(if ok { 1.0 } else { 0.0 })
}

pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_tied_rankings() {
        let labels = [true, true, false, false];
        assert_eq!(auroc(&[4.0, 3.0, 2.0, 1.0], &labels).unwrap(), 1.0);
        assert_eq!(average_precision(&[4.0, 3.0, 2.0, 1.0], &labels).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0; 4], &labels).unwrap(), 0.5);
        assert_eq!(average_precision(&[1.0; 4], &labels).unwrap(), 0.5);
        assert!(matches!(auroc(&[1.0, 2.0], &[true, true]), Err(Error::Metric(_))));
        assert!(average_precision(&[1.0], &[false]).is_err());
    }

    #[test]
    fn key_examples() {
        assert_eq!(key_weighted(0, 0).unwrap(), 1.0);
        assert_eq!(key_weighted(7, 0).unwrap(), 0.5);
        assert_eq!(key_weighted(21, 0).unwrap(), 0.3);
        assert_eq!(key_weighted(12, 0).unwrap(), 0.2);
        assert_eq!(key_weighted(1, 0).unwrap(), 0.0);
        assert!(key_weighted(24, 0).is_err());
    }

    #[test]
    fn tempo_examples() {
        assert_eq!(tempo_acc(120.0, 120.0, 1).unwrap(), 1.0);
        assert_eq!(tempo_acc(60.0, 120.0, 1).unwrap(), 0.0);
        assert_eq!(tempo_acc(60.0, 120.0, 2).unwrap(), 1.0);
        assert_eq!(tempo_acc(125.0, 120.0, 1).unwrap(), 0.0);
        assert!(tempo_acc(0.0, 120.0, 1).is_err());
        assert!(tempo_acc(120.0, 120.0, 3).is_err());
    }

    #[test]
    fn cosine_distance_basics() {
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 2.0]), 1.0);
        assert!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]) < 1e-12);
        assert!((cosine_distance(&[1.0, 0.0], &[-3.0, 0.0]) - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_maps(
            raw in prop::collection::vec((0u8..6, any::<bool>()), 4..30)
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
            let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let mapped: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() - 3.0).collect();
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&mapped, &labels).unwrap());
            prop_assert_eq!(average_precision(&scores, &labels).unwrap(), average_precision(&mapped, &labels).unwrap());
        }

        #[test]
        fn acc2_dominates_acc1(p in 1.0f64..400.0, t in 20.0f64..300.0) {
            prop_assert!(tempo_acc(p, t, 2).unwrap() >= tempo_acc(p, t, 1).unwrap());
        }

        #[test]
        fn cosine_distance_symmetric(a in prop::collection::vec(-5.0f32..5.0, 3), b in prop::collection::vec(-5.0f32..5.0, 3)) {
            prop_assert_eq!(cosine_distance(&a, &b), cosine_distance(&b, &a));
            let d = cosine_distance(&a, &b);
            prop_assert!((0.0..=2.0).contains(&d));
            prop_assert!(cosine_distance(&a, &a) < 1e-6 || a.iter().all(|&x| x == 0.0));
        }
    }
}
