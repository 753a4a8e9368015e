//! Tracklet similarity scoring, threshold calibration and grouping.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{by_procedure, TrackletId, TrackletRecord};
use crate::diffcore::{dot, l2_norm, Tensor};
use crate::encoders::{encode_tracklet_average, encode_tracklet_joint, uniform_view_indices, Embedding, ReidModel, UNIT_NORM_TOL};
use crate::error::{Error, Result};
use crate::io::{PairLabel, PairRecord};

/// `M[p][q] = A[p]·B[q]` for unit-norm rows.
pub fn pairwise_similarity_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::EmptyInput("pairwise_similarity_matrix"));
    }
    for row in a.row_iter().chain(b.row_iter()) {
        let n = l2_norm(row);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!("similarity input has norm {n}, expected 1")));
        }
    }
    a.matmul_t(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Min,
    Max,
    Mean,
}

pub fn late_fusion_score(m: &Tensor, agg: Aggregate) -> f64 {
    let d = m.data();
    match agg {
        Aggregate::Min => d.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregate::Max => d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregate::Mean => d.iter().sum::<f64>() / d.len() as f64,
    }
}

pub fn joint_score(a: &Embedding, b: &Embedding) -> f64 {
    dot(a.as_slice(), b.as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    LateMin,
    LateMax,
    LateMean,
    MvAverage,
    MvJoint,
}

impl Scorer {
    pub const ALL: [Scorer; 5] = [Scorer::LateMin, Scorer::LateMax, Scorer::LateMean, Scorer::MvAverage, Scorer::MvJoint];

    pub fn name(self) -> &'static str {
        match self {
            Scorer::LateMin => "late_min",
            Scorer::LateMax => "late_max",
            Scorer::LateMean => "late_mean",
            Scorer::MvAverage => "mv_average",
            Scorer::MvJoint => "mv_joint",
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scorer::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scorer {s:?}")))
    }
}

/// What a scorer compares: per-frame embeddings or one tracklet vector.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackletRepr {
    Frames(Tensor),
    Vector(Embedding),
}

impl TrackletRepr {
    pub fn as_vector(&self) -> Option<&Embedding> {
        match self {
            TrackletRepr::Vector(e) => Some(e),
            TrackletRepr::Frames(_) => None,
        }
    }
}

/// The views every scorer compares: up to `max_views` frames evenly spaced
/// along the tracklet.
pub fn tracklet_views(tracklet: &TrackletRecord, max_views: usize) -> Vec<&[f64]> {
    uniform_view_indices(tracklet.len(), max_views)
        .into_iter()
        .map(|i| tracklet.frames[i].features.as_slice())
        .collect()
}

pub fn represent(model: &ReidModel, tracklet: &TrackletRecord, scorer: Scorer) -> Result<TrackletRepr> {
    if tracklet.is_empty() {
        return Err(Error::EmptyTracklet);
    }
    let views = tracklet_views(tracklet, model.joint.max_views);
    match scorer {
        Scorer::LateMin | Scorer::LateMax | Scorer::LateMean => {
            let x = Tensor::from_rows(&views)?;
            Ok(TrackletRepr::Frames(model.frame.embed(&x)?))
        }
        Scorer::MvAverage => Ok(TrackletRepr::Vector(encode_tracklet_average(&views, &model.frame)?)),
        Scorer::MvJoint => Ok(TrackletRepr::Vector(encode_tracklet_joint(&views, &model.joint)?)),
    }
}

/// Representations of many tracklets, computed in parallel, in input order.
pub fn represent_all(model: &ReidModel, tracklets: &[TrackletRecord], scorer: Scorer) -> Result<Vec<TrackletRepr>> {
    tracklets.par_iter().map(|t| represent(model, t, scorer)).collect()
}

pub fn score_reprs(a: &TrackletRepr, b: &TrackletRepr, scorer: Scorer) -> Result<f64> {
    match (a, b) {
        (TrackletRepr::Frames(x), TrackletRepr::Frames(y)) => {
            let m = x.matmul_t(y)?;
            let agg = match scorer {
                Scorer::LateMin => Aggregate::Min,
                Scorer::LateMax => Aggregate::Max,
                Scorer::LateMean => Aggregate::Mean,
                _ => return Err(Error::Contract(format!("{scorer} does not compare frame sets"))),
            };
            Ok(late_fusion_score(&m, agg))
        }
        (TrackletRepr::Vector(x), TrackletRepr::Vector(y)) => Ok(joint_score(x, y)),
        _ => Err(Error::Contract("mismatched tracklet representations".into())),
    }
}

fn pair_label(a: &TrackletRecord, b: &TrackletRecord) -> PairLabel {
    match (a.entity_id, b.entity_id) {
        (Some(x), Some(y)) if x == y => PairLabel::Same,
        (Some(_), Some(_)) => PairLabel::Diff,
        _ => PairLabel::Unknown,
    }
}

/// Every unordered pair of distinct tracklets from the same procedure, with
/// `tracklet_a < tracklet_b`, ordered by procedure then ids.
pub fn within_procedure_pairs(tracklets: &[TrackletRecord]) -> Vec<(usize, usize)> {
    let index: BTreeMap<TrackletId, usize> = tracklets.iter().enumerate().map(|(i, t)| (t.tracklet_id, i)).collect();
    let mut out = Vec::new();
    for group in by_procedure(tracklets).values() {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                out.push((index[&a.tracklet_id], index[&b.tracklet_id]));
            }
        }
    }
    out
}

/// Scores all within-procedure pairs and labels them from ground truth
/// where both entity ids are known.
pub fn score_pairs(model: &ReidModel, tracklets: &[TrackletRecord], scorer: Scorer) -> Result<Vec<PairRecord>> {
    let reprs = represent_all(model, tracklets, scorer)?;
    within_procedure_pairs(tracklets)
        .into_par_iter()
        .map(|(i, j)| {
            let (a, b) = (&tracklets[i], &tracklets[j]);
            Ok(PairRecord {
                tracklet_a: a.tracklet_id,
                tracklet_b: b.tracklet_id,
                label: pair_label(a, b),
                score: Some(score_reprs(&reprs[i], &reprs[j], scorer)?),
            })
        })
        .collect()
}

/// Smallest threshold `t` with `#{negatives ≥ t} / #negatives ≤ target_fpr`.
///
/// Candidates are the negative scores themselves and the next float above
/// the largest one, so the result is always an attained order statistic or
/// the zero-false-positive bound.
pub fn calibrate_threshold(scores: &[(f64, bool)], target_fpr: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target_fpr) {
        return Err(Error::Config(format!("target FPR must be in [0, 1], got {target_fpr}")));
    }
    let mut neg: Vec<f64> = scores.iter().filter(|(_, same)| !same).map(|(s, _)| *s).collect();
    if neg.is_empty() {
        return Err(Error::NoNegatives);
    }
    if neg.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score in calibration set".into()));
    }
    neg.sort_by(f64::total_cmp);
    let n = neg.len();
    // neg[i] as threshold admits n − i negatives (first occurrence of a tie)
    for i in 0..n {
        if i > 0 && neg[i] == neg[i - 1] {
            continue;
        }
        if (n - i) as f64 / n as f64 <= target_fpr {
            return Ok(neg[i]);
        }
    }
    Ok(neg[n - 1].next_up())
}

/// Fraction of negatives with score ≥ `threshold`.
pub fn empirical_fpr(scores: &[(f64, bool)], threshold: f64) -> Result<f64> {
    let neg: Vec<f64> = scores.iter().filter(|(_, same)| !same).map(|(s, _)| *s).collect();
    if neg.is_empty() {
        return Err(Error::NoNegatives);
    }
    Ok(neg.iter().filter(|&&s| s >= threshold).count() as f64 / neg.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMethod {
    /// Connected components of the thresholded similarity graph.
    #[default]
    Components,
    /// Tracklets in start-time order join the existing group holding their
    /// best-scoring member, when that score reaches the threshold.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingPartition {
    pub groups: BTreeMap<u64, Vec<TrackletId>>,
    /// Absent for partitions not derived from a score threshold.
    pub threshold: Option<f64>,
    pub scorer: String,
}

impl GroupingPartition {
    /// Groups sorted internally and renumbered by their smallest member.
    pub fn from_groups(mut groups: Vec<Vec<TrackletId>>, threshold: Option<f64>, scorer: &str) -> Self {
        for g in groups.iter_mut() {
            g.sort_unstable();
        }
        groups.retain(|g| !g.is_empty());
        groups.sort();
        GroupingPartition {
            groups: groups.into_iter().enumerate().map(|(i, g)| (i as u64, g)).collect(),
            threshold,
            scorer: scorer.to_string(),
        }
    }

    /// Every tracklet alone.
    pub fn singletons(ids: impl IntoIterator<Item = TrackletId>, scorer: &str) -> Self {
        Self::from_groups(ids.into_iter().map(|t| vec![t]).collect(), None, scorer)
    }

    pub fn group_list(&self) -> Vec<Vec<TrackletId>> {
        self.groups.values().cloned().collect()
    }

    /// Group id per tracklet.
    pub fn assignment(&self) -> BTreeMap<TrackletId, u64> {
        self.groups
            .iter()
            .flat_map(|(g, ts)| ts.iter().map(move |t| (*t, *g)))
            .collect()
    }
}

pub type PairScores = BTreeMap<(TrackletId, TrackletId), f64>;

pub fn pair_score_map(pairs: &[PairRecord]) -> PairScores {
    pairs.iter().filter_map(|p| p.score.map(|s| (p.key(), s))).collect()
}

fn lookup(scores: &PairScores, a: TrackletId, b: TrackletId) -> Option<f64> {
    scores.get(&(a.min(b), a.max(b))).copied()
}

/// Groups the tracklets of one procedure. Missing pair scores count as
/// below threshold.
pub fn group_procedure(
    tracklets: &[&TrackletRecord],
    scores: &PairScores,
    threshold: f64,
    method: GroupingMethod,
) -> Vec<Vec<TrackletId>> {
    let n = tracklets.len();
    match method {
        GroupingMethod::Components => {
            let mut uf = UnionFind::<usize>::new(n);
            for i in 0..n {
                for j in i + 1..n {
                    if lookup(scores, tracklets[i].tracklet_id, tracklets[j].tracklet_id).is_some_and(|s| s >= threshold) {
                        uf.union(i, j);
                    }
                }
            }
            let mut groups: BTreeMap<usize, Vec<TrackletId>> = BTreeMap::new();
            for (i, t) in tracklets.iter().enumerate() {
                groups.entry(uf.find(i)).or_default().push(t.tracklet_id);
            }
            groups.into_values().collect()
        }
        GroupingMethod::Greedy => {
            let mut order: Vec<&TrackletRecord> = tracklets.to_vec();
            order.sort_by(|a, b| a.start_time().total_cmp(&b.start_time()).then(a.tracklet_id.cmp(&b.tracklet_id)));
            let mut groups: Vec<Vec<TrackletId>> = Vec::new();
            for t in order {
                let best = groups
                    .iter()
                    .enumerate()
                    .filter_map(|(g, members)| {
                        members
                            .iter()
                            .filter_map(|&m| lookup(scores, m, t.tracklet_id))
                            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
                            .map(|s| (g, s))
                    })
                    .filter(|(_, s)| *s >= threshold)
                    .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
                match best {
                    Some((g, _)) => groups[g].push(t.tracklet_id),
                    None => groups.push(vec![t.tracklet_id]),
                }
            }
            groups
        }
    }
}

/// Groups every procedure independently; pairs across procedures are never
/// linked.
pub fn group_tracklets(
    tracklets: &[TrackletRecord],
    scores: &PairScores,
    threshold: f64,
    scorer: &str,
    method: GroupingMethod,
) -> GroupingPartition {
    let groups = by_procedure(tracklets)
        .values()
        .flat_map(|ts| group_procedure(ts, scores, threshold, method))
        .collect();
    GroupingPartition::from_groups(groups, Some(threshold), scorer)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::Frame;
    use crate::encoders::EncoderConfig;

    fn rows(v: &[&[f64]]) -> Tensor {
        Tensor::from_rows(v).unwrap()
    }

    #[test]
    fn similarity_matrix_examples() {
        let e1 = rows(&[&[1.0, 0.0]]);
        let e2 = rows(&[&[0.0, 1.0]]);
        assert_eq!(pairwise_similarity_matrix(&e1, &e1).unwrap().data(), &[1.0]);
        assert_eq!(pairwise_similarity_matrix(&e1, &e2).unwrap().data(), &[0.0]);
        let h = 0.5f64.sqrt();
        let m = pairwise_similarity_matrix(&rows(&[&[1.0, 0.0], &[0.0, 1.0]]), &rows(&[&[h, h]])).unwrap();
        assert_eq!(m.shape(), (2, 1));
        assert_eq!(m.data(), &[h, h]);
        assert!(matches!(pairwise_similarity_matrix(&Tensor::zeros(0, 2), &e1), Err(Error::EmptyInput(_))));
        assert!(matches!(pairwise_similarity_matrix(&rows(&[&[2.0, 0.0]]), &e1), Err(Error::Contract(_))));
    }

    #[test]
    fn late_fusion_examples() {
        let m = rows(&[&[0.9, 0.1], &[0.5, 0.7]]);
        assert_eq!(late_fusion_score(&m, Aggregate::Min), 0.1);
        assert_eq!(late_fusion_score(&m, Aggregate::Max), 0.9);
        assert_abs_diff_eq!(late_fusion_score(&m, Aggregate::Mean), 0.55, epsilon = 1e-15);
        for agg in [Aggregate::Min, Aggregate::Max, Aggregate::Mean] {
            assert_eq!(late_fusion_score(&Tensor::filled(3, 2, 0.25), agg), 0.25);
            assert_eq!(late_fusion_score(&rows(&[&[-0.3]]), agg), -0.3);
        }
    }

    #[test]
    fn joint_score_examples() {
        let a = Embedding::normalized(vec![1.0, 2.0, 2.0]).unwrap();
        let neg = Embedding::normalized(vec![-1.0, -2.0, -2.0]).unwrap();
        assert_abs_diff_eq!(joint_score(&a, &a), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(joint_score(&a, &neg), -1.0, epsilon = 1e-15);
        let x = Embedding::from_unit(vec![1.0, 0.0, 0.0]).unwrap();
        let y = Embedding::from_unit(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(joint_score(&x, &y), 0.0);
    }

    fn labelled(scores: &[f64], positives: &[f64]) -> Vec<(f64, bool)> {
        scores.iter().map(|&s| (s, false)).chain(positives.iter().map(|&s| (s, true))).collect()
    }

    #[test]
    fn calibration_examples() {
        let negs: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let t = calibrate_threshold(&labelled(&negs, &[0.95]), 0.11).unwrap();
        // 1/9 exceeds 0.11, so no negative may pass
        assert_eq!(t, 0.9f64.next_up());
        assert_eq!(calibrate_threshold(&labelled(&[0.2, 0.4], &[]), 0.5).unwrap(), 0.4);
        assert_eq!(calibrate_threshold(&labelled(&[0.2, 0.4], &[]), 0.0).unwrap(), 0.4f64.next_up());
        assert!(matches!(calibrate_threshold(&labelled(&[], &[0.3]), 0.05), Err(Error::NoNegatives)));
        // tied negatives cannot be split
        assert_eq!(calibrate_threshold(&labelled(&[0.5, 0.5, 0.1, 0.2], &[]), 0.25).unwrap(), 0.5f64.next_up());
    }

    proptest! {
        #[test]
        fn calibration_is_valid_and_minimal(
            negs in prop::collection::vec((0u8..20).prop_map(|q| q as f64 / 20.0), 1..60),
            target in 0.0f64..1.0,
        ) {
            let s = labelled(&negs, &[]);
            let t = calibrate_threshold(&s, target).unwrap();
            prop_assert!(empirical_fpr(&s, t).unwrap() <= target);
            let below = negs.iter().copied().filter(|&x| x < t).fold(f64::NEG_INFINITY, f64::max);
            if below.is_finite() {
                prop_assert!(empirical_fpr(&s, below).unwrap() > target);
            }
        }
    }

    fn tracklet(id: u64, proc: u64, start: f64) -> TrackletRecord {
        TrackletRecord {
            tracklet_id: id,
            procedure_id: proc,
            entity_id: None,
            frames: vec![Frame { frame_index: 0, timestamp: start, confidence: 1.0, features: vec![0.0] }],
        }
    }

    fn scores(entries: &[(u64, u64, f64)]) -> PairScores {
        entries.iter().map(|&(a, b, s)| ((a.min(b), a.max(b)), s)).collect()
    }

    #[test]
    fn grouping_examples() {
        let ts: Vec<_> = (1..=3).map(|i| tracklet(i, 0, i as f64)).collect();
        let sc = scores(&[(1, 2, 0.8), (2, 3, 0.7), (1, 3, 0.2)]);
        let p = group_tracklets(&ts, &sc, 0.6, "mv_joint", GroupingMethod::Components);
        assert_eq!(p.group_list(), vec![vec![1, 2, 3]]);
        let p = group_tracklets(&ts, &sc, 0.9, "mv_joint", GroupingMethod::Components);
        assert_eq!(p.group_list(), vec![vec![1], vec![2], vec![3]]);
        let ts: Vec<_> = (1..=5).map(|i| tracklet(i, 0, i as f64)).collect();
        let sc = scores(&[(1, 2, 0.9), (3, 4, 0.9), (1, 5, 0.1)]);
        let p = group_tracklets(&ts, &sc, 0.5, "x", GroupingMethod::Components);
        assert_eq!(p.group_list(), vec![vec![1, 2], vec![3, 4], vec![5]]);
    }

    #[test]
    fn greedy_merges_into_best_group_only() {
        let ts: Vec<_> = (1..=3).map(|i| tracklet(i, 0, i as f64)).collect();
        // 3 links to both earlier tracklets, which stay apart from each other
        let sc = scores(&[(1, 2, 0.1), (1, 3, 0.7), (2, 3, 0.8)]);
        let p = group_tracklets(&ts, &sc, 0.6, "x", GroupingMethod::Greedy);
        assert_eq!(p.group_list(), vec![vec![1], vec![2, 3]]);
        let c = group_tracklets(&ts, &sc, 0.6, "x", GroupingMethod::Components);
        assert_eq!(c.group_list(), vec![vec![1, 2, 3]]);
    }

    #[test]
    fn procedures_are_never_linked() {
        let ts = vec![tracklet(1, 0, 0.0), tracklet(2, 1, 0.0)];
        let p = group_tracklets(&ts, &scores(&[(1, 2, 1.0)]), 0.5, "x", GroupingMethod::Components);
        assert_eq!(p.groups.len(), 2);
    }

    #[test]
    fn partition_json_shape() {
        let p = GroupingPartition::from_groups(vec![vec![3, 1], vec![2]], Some(0.5), "mv_joint");
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["groups"]["0"], serde_json::json!([1, 3]));
        assert_eq!(v["scorer"], "mv_joint");
        let back: GroupingPartition = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }

    fn random_graph(seed: u64, n: usize) -> (Vec<TrackletRecord>, PairScores) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<_> = (0..n as u64).map(|i| tracklet(i, 0, rng.random())).collect();
        let mut sc = PairScores::new();
        for i in 0..n as u64 {
            for j in i + 1..n as u64 {
                sc.insert((i, j), rng.random_range(-1.0..1.0));
            }
        }
        (ts, sc)
    }

    proptest! {
        #[test]
        fn grouping_is_a_partition(seed in any::<u64>(), n in 1usize..12, t in -1.0f64..1.0, greedy in any::<bool>()) {
            let (ts, sc) = random_graph(seed, n);
            let method = if greedy { GroupingMethod::Greedy } else { GroupingMethod::Components };
            let p = group_tracklets(&ts, &sc, t, "x", method);
            let all: Vec<u64> = p.groups.values().flatten().copied().collect();
            let set: BTreeSet<u64> = all.iter().copied().collect();
            prop_assert_eq!(all.len(), set.len());
            prop_assert_eq!(set, (0..n as u64).collect::<BTreeSet<_>>());
        }

        #[test]
        fn raising_threshold_refines_components(seed in any::<u64>(), n in 1usize..12, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let (ts, sc) = random_graph(seed, n);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let coarse = group_tracklets(&ts, &sc, lo, "x", GroupingMethod::Components).assignment();
            let fine = group_tracklets(&ts, &sc, hi, "x", GroupingMethod::Components).assignment();
            for i in 0..n as u64 {
                for j in 0..n as u64 {
                    if fine[&i] == fine[&j] {
                        prop_assert_eq!(coarse[&i], coarse[&j]);
                    }
                }
            }
        }
    }

    fn tiny_model() -> ReidModel {
        let cfg = EncoderConfig {
            feature_dim: 3,
            hidden_dim: 8,
            embed_dim: 4,
            heads: 2,
            ffn_dim: 8,
            blocks: 1,
            max_views: 4,
        };
        let mut m = ReidModel::init(&cfg, 11).unwrap();
        // keeps outputs away from zero when every ReLU is inactive
        for head in [&mut m.frame.head, &mut m.joint.head] {
            head.layers.last_mut().unwrap().bias.data_mut().fill(0.3);
        }
        m
    }

    fn random_tracklet(seed: u64, id: u64, len: usize) -> TrackletRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TrackletRecord {
            tracklet_id: id,
            procedure_id: 0,
            entity_id: Some(id % 2),
            frames: (0..len)
                .map(|i| Frame {
                    frame_index: i as u64,
                    timestamp: i as f64,
                    confidence: 1.0,
                    features: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scorers_are_symmetric_and_ordered(seed in any::<u64>(), la in 1usize..10, lb in 1usize..10) {
            let model = tiny_model();
            let a = random_tracklet(seed, 0, la);
            let b = random_tracklet(seed ^ 0x5555, 1, lb);
            let mut late = Vec::new();
            for sc in Scorer::ALL {
                let ra = represent(&model, &a, sc).unwrap();
                let rb = represent(&model, &b, sc).unwrap();
                let ab = score_reprs(&ra, &rb, sc).unwrap();
                prop_assert!((ab - score_reprs(&rb, &ra, sc).unwrap()).abs() < 1e-12);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
                late.push(ab);
            }
            prop_assert!(late[0] <= late[2] + 1e-12 && late[2] <= late[1] + 1e-12);
        }
    }

    #[test]
    fn score_pairs_labels_within_procedures() {
        let model = tiny_model();
        let mut ts: Vec<_> = (0..4).map(|i| random_tracklet(i, i, 5)).collect();
        ts[3].procedure_id = 1;
        ts[2].entity_id = None;
        let pairs = score_pairs(&model, &ts, Scorer::MvJoint).unwrap();
        let keys: Vec<_> = pairs.iter().map(|p| (p.tracklet_a, p.tracklet_b, p.label)).collect();
        assert_eq!(
            keys,
            vec![(0, 1, PairLabel::Diff), (0, 2, PairLabel::Unknown), (1, 2, PairLabel::Unknown)]
        );
        assert!("mv_joint".parse::<Scorer>().is_ok() && "nope".parse::<Scorer>().is_err());
    }
}
