//! Ranking and grouping metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{EntityId, TrackletId};
use crate::error::{Error, Result};

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "metric",
            left: (scores.len(), 1),
            right: (labels.len(), 1),
        });
    }
    Ok(())
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// Score-descending order, then grouped by equal score.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for i in idx {
        let (s, l) = (scores[i], labels[i]);
        match out.last_mut() {
            Some(g) if g.0 == s => {
                if l { g.1 += 1 } else { g.2 += 1 }
            }
            _ => out.push((s, l as usize, (!l) as usize)),
        }
    }
    out
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined("roc_auc needs both classes"));
    }
    // Sweep from the highest score; negatives seen so far outrank later positives.
    let mut wins = 0.0;
    let mut neg_above = 0usize;
    for (_, p, n) in tie_groups(scores, labels).into_iter().rev() {
        wins += p as f64 * neg_above as f64 + 0.5 * (p * n) as f64;
        neg_above += n;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// ROC curve points `(fpr, tpr)` from the strictest threshold down,
/// starting at `(0, 0)`; tied scores form a single step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined("roc_curve needs both classes"));
    }
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, n) in tie_groups(scores, labels) {
        tp += p;
        fp += n;
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// Trapezoidal area under [`roc_curve`]; equals [`roc_auc`] up to rounding.
pub fn roc_auc_trapezoid(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pts = roc_curve(scores, labels)?;
    Ok(pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum())
}

/// Average precision `Σ (R_i − R_{i−1})·P_i` over distinct score thresholds.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::MetricUndefined("pr_auc needs at least one positive"));
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for (_, p, n) in tie_groups(scores, labels) {
        tp += p;
        seen += p + n;
        ap += (p as f64 / pos as f64) * (tp as f64 / seen as f64);
    }
    Ok(ap)
}

/// Best sensitivity among thresholds whose specificity reaches
/// `min_specificity`; returns `(sensitivity, threshold)`. Decision rule is
/// `score ≥ threshold`; among equally sensitive thresholds the highest wins.
pub fn sensitivity_at_specificity(scores: &[f64], labels: &[bool], min_specificity: f64) -> Result<(f64, f64)> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined("sensitivity_at_specificity needs both classes"));
    }
    let groups = tie_groups(scores, labels);
    // The threshold above every score rejects everything.
    let mut best = (0.0, groups[0].0.next_up());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (s, p, n) in groups {
        tp += p;
        fp += n;
        let spec = 1.0 - fp as f64 / neg as f64;
        let sens = tp as f64 / pos as f64;
        if spec >= min_specificity && sens > best.0 {
            best = (sens, s);
        }
    }
    Ok(best)
}

/// Macro and micro F1 for binary predictions. A class with no predicted
/// and no actual members contributes F1 = 0.
pub fn f1_scores(predictions: &[bool], labels: &[bool]) -> Result<(f64, f64)> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension {
            op: "f1_scores",
            left: (predictions.len(), 1),
            right: (labels.len(), 1),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("f1_scores"));
    }
    let mut c = [[0usize; 2]; 2];
    for (&p, &l) in predictions.iter().zip(labels) {
        c[p as usize][l as usize] += 1;
    }
    let f1 = |tp: usize, fp: usize, fnn: usize| {
        let d = 2 * tp + fp + fnn;
        if tp == 0 { 0.0 } else { 2.0 * tp as f64 / d as f64 }
    };
    let pos = f1(c[1][1], c[1][0], c[0][1]);
    let neg = f1(c[0][0], c[0][1], c[1][0]);
    let correct = c[0][0] + c[1][1];
    // pooled TP = correct, pooled FP = pooled FN = incorrect
    let micro = correct as f64 / labels.len() as f64;
    Ok(((pos + neg) / 2.0, micro))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentationReport {
    pub fr: f64,
    pub fr_std: f64,
    pub fragmented_ratio: f64,
    pub per_entity: BTreeMap<EntityId, usize>,
    /// Groups holding tracklets of more than one entity.
    pub impurity: usize,
}

/// Fragments per ground-truth entity under a grouping of tracklets.
pub fn fragmentation_report(
    groups: &[Vec<TrackletId>],
    ground_truth: &BTreeMap<TrackletId, EntityId>,
) -> Result<FragmentationReport> {
    let mut per_entity: BTreeMap<EntityId, usize> = BTreeMap::new();
    let mut impurity = 0;
    for g in groups {
        let entities = g
            .iter()
            .map(|t| ground_truth.get(t).copied().ok_or(Error::MissingGroundTruth(*t)))
            .collect::<Result<BTreeSet<_>>>()?;
        if entities.len() > 1 {
            impurity += 1;
        }
        for e in entities {
            *per_entity.entry(e).or_default() += 1;
        }
    }
    if per_entity.is_empty() {
        return Err(Error::EmptyInput("fragmentation_report"));
    }
    let n = per_entity.len() as f64;
    let fr = per_entity.values().map(|&c| c as f64).sum::<f64>() / n;
    let var = per_entity.values().map(|&c| (c as f64 - fr).powi(2)).sum::<f64>() / n;
    let fragmented = per_entity.values().filter(|&&c| c > 1).count() as f64 / n;
    Ok(FragmentationReport {
        fr,
        fr_std: var.sqrt(),
        fragmented_ratio: fragmented,
        per_entity,
        impurity,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub fr: Option<f64>,
    pub fr_std: Option<f64>,
    pub fragmented_ratio: Option<f64>,
    pub impurity: Option<usize>,
    pub f1_macro: Option<f64>,
    pub f1_micro: Option<f64>,
    pub sens_at_spec: Option<f64>,
    pub threshold: Option<f64>,
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut w, mut n) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    n += 1.0;
                    if scores[i] > scores[j] {
                        w += 1.0;
                    } else if scores[i] == scores[j] {
                        w += 0.5;
                    }
                }
            }
        }
        w / n
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.7, 0.5, 0.5, 0.2], &[true, false, true, false]).unwrap(), 0.875);
        assert_eq!(roc_auc_trapezoid(&[0.7, 0.5, 0.5, 0.2], &[true, false, true, false]).unwrap(), 0.875);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn ap_examples() {
        assert_abs_diff_eq!(pr_auc(&[0.9, 0.6, 0.4], &[true, false, true]).unwrap(), 5.0 / 6.0, epsilon = 1e-15);
        assert_eq!(pr_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        // p=2 positives ranked last among 4: recall steps at ranks 3 and 4
        let ap = pr_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap();
        assert_abs_diff_eq!(ap, 0.5 * (1.0 / 3.0) + 0.5 * 0.5, epsilon = 1e-15);
        assert!(pr_auc(&[0.3], &[false]).is_err());
    }

    #[test]
    fn sensitivity_examples() {
        let s = [0.9, 0.8, 0.4, 0.7, 0.3, 0.2, 0.1];
        let l = [true, true, true, false, false, false, false];
        let (sens, t) = sensitivity_at_specificity(&s, &l, 0.9).unwrap();
        assert_abs_diff_eq!(sens, 2.0 / 3.0, epsilon = 1e-15);
        assert!(t > 0.7);
        assert_eq!(sensitivity_at_specificity(&s, &l, 0.0).unwrap().0, 1.0);
        let sep = sensitivity_at_specificity(&[0.9, 0.8, 0.1], &[true, true, false], 0.9).unwrap();
        assert_eq!(sep.0, 1.0);
    }

    #[test]
    fn f1_examples() {
        let mut p = vec![true, true, true, false];
        let mut l = vec![true, true, false, true];
        p.extend([false; 6]);
        l.extend([false; 6]);
        let (macro_f1, micro) = f1_scores(&p, &l).unwrap();
        assert_abs_diff_eq!(macro_f1, (2.0 / 3.0 + 6.0 / 7.0) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(macro_f1, 0.7619, epsilon = 1e-4);
        assert_abs_diff_eq!(micro, 0.8, epsilon = 1e-15);
        assert_eq!(f1_scores(&l, &l).unwrap(), (1.0, 1.0));
        let (m, u) = f1_scores(&[true; 4], &[true, true, false, false]).unwrap();
        assert_abs_diff_eq!(m, 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(u, 0.5);
    }

    #[test]
    fn fragmentation_examples() {
        let gt: BTreeMap<u64, u64> = [(1, 1), (2, 1), (3, 1), (4, 2)].into_iter().collect();
        let r = fragmentation_report(&[vec![1, 2], vec![3], vec![4]], &gt).unwrap();
        assert_eq!(r.per_entity.values().copied().collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!((r.fr, r.fr_std, r.fragmented_ratio, r.impurity), (1.5, 0.5, 0.5, 0));
        let r = fragmentation_report(&[vec![1, 2, 3], vec![4]], &gt).unwrap();
        assert_eq!((r.fr, r.fr_std, r.fragmented_ratio), (1.0, 0.0, 0.0));
        let r = fragmentation_report(&[vec![1], vec![2], vec![3], vec![4]], &gt).unwrap();
        assert_eq!(r.per_entity[&1], 3);
        let r = fragmentation_report(&[vec![1, 2, 3, 4]], &gt).unwrap();
        assert_eq!((r.fr, r.impurity), (1.0, 1));
        assert!(matches!(
            fragmentation_report(&[vec![9]], &gt),
            Err(Error::MissingGroundTruth(9))
        ));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..50).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..8).prop_map(|q| q as f64 / 8.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force_and_trapezoid((s, l) in instance()) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let a = roc_auc(&s, &l).unwrap();
            prop_assert!((a - brute_auc(&s, &l)).abs() < 1e-12);
            prop_assert!((a - roc_auc_trapezoid(&s, &l).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auc_negation_complements(s in prop::collection::vec(-1e3f64..1e3, 2..40), seed in any::<u64>()) {
            let mut dedup = s.clone();
            dedup.sort_by(f64::total_cmp);
            dedup.dedup();
            prop_assume!(dedup.len() == s.len());
            let l: Vec<bool> = (0..s.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let neg: Vec<f64> = s.iter().map(|x| -x).collect();
            prop_assert!((roc_auc(&s, &l).unwrap() + roc_auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
            let mono: Vec<f64> = s.iter().map(|x| (x / 100.0).exp()).collect();
            prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&mono, &l).unwrap());
        }

        #[test]
        fn sensitivity_monotone_in_specificity((s, l) in instance(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(sensitivity_at_specificity(&s, &l, hi).unwrap().0 <= sensitivity_at_specificity(&s, &l, lo).unwrap().0);
        }

        #[test]
        fn intact_entities_report_unit_fr(sizes in prop::collection::vec(1usize..5, 1..10), split in any::<bool>()) {
            let mut gt = BTreeMap::new();
            let mut groups = Vec::new();
            let mut t = 0u64;
            for (e, &k) in sizes.iter().enumerate() {
                let members: Vec<u64> = (t..t + k as u64).collect();
                for &m in &members { gt.insert(m, e as u64); }
                t += k as u64;
                if split && k > 1 {
                    groups.push(members[..1].to_vec());
                    groups.push(members[1..].to_vec());
                } else {
                    groups.push(members);
                }
            }
            let r = fragmentation_report(&groups, &gt).unwrap();
            let intact = r.fr == 1.0;
            prop_assert_eq!(intact, r.fragmented_ratio == 0.0);
            prop_assert_eq!(intact, r.fr_std == 0.0 && r.per_entity.values().all(|&c| c == 1));
            prop_assert!(r.fr >= 1.0 && (0.0..=1.0).contains(&r.fragmented_ratio));
        }
    }
}
