//! Downstream classification: soft-voted frame scores per group, compared
//! across grouping methods.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{EntityId, TrackletId, TrackletRecord};
use crate::error::{Error, Result};
use crate::io::{index_frame_scores, FrameScore};
use crate::metrics::{f1_scores, fragmentation_report, roc_auc, sensitivity_at_specificity};
use crate::reid::GroupingPartition;

/// Mean of the frame scores.
pub fn soft_vote(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("soft_vote"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedSequence {
    pub group_id: u64,
    pub members: Vec<TrackletId>,
    pub scores: Vec<f64>,
    /// Entity contributing the most frames; ties go to the lowest id.
    pub entity: EntityId,
    pub label: bool,
    /// Members span more than one entity.
    pub impure: bool,
}

impl GroupedSequence {
    pub fn score(&self) -> Result<f64> {
        soft_vote(&self.scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CadxConfig {
    /// Positive prediction when the group score reaches this value.
    pub f1_threshold: f64,
    pub min_specificity: f64,
}

impl Default for CadxConfig {
    fn default() -> Self {
        CadxConfig {
            f1_threshold: 0.5,
            min_specificity: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub entities: usize,
    pub groups: usize,
    pub fr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadxReport {
    pub tracklets: usize,
    pub groups: usize,
    pub fr: f64,
    pub positive: ClassSummary,
    pub negative: ClassSummary,
    pub impure_groups: usize,
    pub auc: f64,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub sens_at_spec: f64,
    pub spec_threshold: f64,
}

/// One group per ground-truth entity within each procedure.
pub fn oracle_partition(tracklets: &[TrackletRecord]) -> Result<GroupingPartition> {
    let mut groups: BTreeMap<(u64, EntityId), Vec<TrackletId>> = BTreeMap::new();
    for t in tracklets {
        let e = t.entity_id.ok_or(Error::MissingGroundTruth(t.tracklet_id))?;
        groups.entry((t.procedure_id, e)).or_default().push(t.tracklet_id);
    }
    Ok(GroupingPartition::from_groups(groups.into_values().collect(), None, "oracle"))
}

/// The three standard groupings: every tracklet alone, the given ReID
/// partition and the ground-truth entities.
pub fn standard_groupings(
    tracklets: &[TrackletRecord],
    reid: GroupingPartition,
) -> Result<BTreeMap<String, GroupingPartition>> {
    let mut out = BTreeMap::new();
    out.insert(
        "fragmented".to_string(),
        GroupingPartition::singletons(tracklets.iter().map(|t| t.tracklet_id), "none"),
    );
    out.insert("reid".to_string(), reid);
    out.insert("oracle".to_string(), oracle_partition(tracklets)?);
    Ok(out)
}

fn check_partition(partition: &GroupingPartition, ids: &BTreeSet<TrackletId>) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut extra = Vec::new();
    for &t in partition.groups.values().flatten() {
        if !ids.contains(&t) || !seen.insert(t) {
            extra.push(t);
        }
    }
    let missing: Vec<TrackletId> = ids.difference(&seen).copied().collect();
    if missing.is_empty() && extra.is_empty() {
        Ok(())
    } else {
        Err(Error::PartitionMismatch { missing, extra })
    }
}

/// Collects member frame scores per group and inherits the majority label.
pub fn build_sequences(
    tracklets: &[TrackletRecord],
    frame_scores: &[FrameScore],
    class_map: &BTreeMap<EntityId, bool>,
    partition: &GroupingPartition,
) -> Result<Vec<GroupedSequence>> {
    let by_id: BTreeMap<TrackletId, &TrackletRecord> = tracklets.iter().map(|t| (t.tracklet_id, t)).collect();
    check_partition(partition, &by_id.keys().copied().collect())?;
    let index = index_frame_scores(frame_scores);
    let mut out = Vec::with_capacity(partition.groups.len());
    for (&group_id, members) in &partition.groups {
        let mut scores = Vec::new();
        let mut frames_per_entity: BTreeMap<EntityId, usize> = BTreeMap::new();
        for t in members {
            let rec = by_id[t];
            let e = rec.entity_id.ok_or(Error::MissingGroundTruth(*t))?;
            *frames_per_entity.entry(e).or_default() += rec.len();
            let ts = index.get(t);
            for f in &rec.frames {
                let s = ts.and_then(|m| m.get(&f.frame_index)).ok_or_else(|| {
                    Error::Contract(format!("frame {} of tracklet {t} has no score", f.frame_index))
                })?;
                scores.push(*s);
            }
        }
        // max_by_key keeps the last maximum, so iterate from the highest id
        let (&entity, _) = frames_per_entity.iter().rev().max_by_key(|(_, &n)| n).ok_or(Error::EmptyInput("group"))?;
        let label = *class_map.get(&entity).ok_or(Error::MissingLabel(entity))?;
        out.push(GroupedSequence {
            group_id,
            members: members.clone(),
            scores,
            entity,
            label,
            impure: frames_per_entity.len() > 1,
        });
    }
    Ok(out)
}

fn class_summary(per_entity: &BTreeMap<EntityId, usize>, class_map: &BTreeMap<EntityId, bool>, class: bool) -> ClassSummary {
    let counts: Vec<usize> = per_entity
        .iter()
        .filter(|(e, _)| class_map.get(e) == Some(&class))
        .map(|(_, &c)| c)
        .collect();
    let groups: usize = counts.iter().sum();
    ClassSummary {
        entities: counts.len(),
        groups,
        fr: if counts.is_empty() { 0.0 } else { groups as f64 / counts.len() as f64 },
    }
}

pub fn evaluate_grouping(
    tracklets: &[TrackletRecord],
    frame_scores: &[FrameScore],
    class_map: &BTreeMap<EntityId, bool>,
    partition: &GroupingPartition,
    cfg: &CadxConfig,
) -> Result<CadxReport> {
    let seqs = build_sequences(tracklets, frame_scores, class_map, partition)?;
    let scores = seqs.iter().map(GroupedSequence::score).collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = seqs.iter().map(|s| s.label).collect();
    let predictions: Vec<bool> = scores.iter().map(|&s| s >= cfg.f1_threshold).collect();
    let (f1_macro, f1_micro) = f1_scores(&predictions, &labels)?;
    let (sens_at_spec, spec_threshold) = sensitivity_at_specificity(&scores, &labels, cfg.min_specificity)?;
    let gt = crate::data::ground_truth(tracklets);
    let frag = fragmentation_report(&partition.group_list(), &gt)?;
    Ok(CadxReport {
        tracklets: tracklets.len(),
        groups: seqs.len(),
        fr: frag.fr,
        positive: class_summary(&frag.per_entity, class_map, true),
        negative: class_summary(&frag.per_entity, class_map, false),
        impure_groups: seqs.iter().filter(|s| s.impure).count(),
        auc: roc_auc(&scores, &labels)?,
        f1_macro,
        f1_micro,
        sens_at_spec,
        spec_threshold,
    })
}

/// Report per named grouping; every grouping must partition the same
/// tracklets.
pub fn evaluate_groupings(
    tracklets: &[TrackletRecord],
    frame_scores: &[FrameScore],
    class_map: &BTreeMap<EntityId, bool>,
    groupings: &BTreeMap<String, GroupingPartition>,
    cfg: &CadxConfig,
) -> Result<BTreeMap<String, CadxReport>> {
    groupings
        .iter()
        .map(|(name, p)| Ok((name.clone(), evaluate_grouping(tracklets, frame_scores, class_map, p, cfg)?)))
        .collect()
}
