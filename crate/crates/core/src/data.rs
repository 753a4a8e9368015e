use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TrackletId = u64;
pub type ProcedureId = u64;
pub type EntityId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_index: u64,
    /// Seconds since the start of the procedure.
    pub timestamp: f64,
    pub confidence: f64,
    pub features: Vec<f64>,
}

/// One tracker output: consecutive detections of a single target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletRecord {
    pub tracklet_id: TrackletId,
    pub procedure_id: ProcedureId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<EntityId>,
    pub frames: Vec<Frame>,
}

impl TrackletRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Seconds between the first and last frame.
    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }

    pub fn start_time(&self) -> f64 {
        self.frames.first().map_or(0.0, |f| f.timestamp)
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.frames.iter().map(|f| f.features.as_slice()).collect()
    }

    pub fn validate(&self, feature_dim: Option<usize>) -> Result<()> {
        let bad = |reason: String| Error::Format {
            kind: "tracklet",
            reason: format!("tracklet {}: {reason}", self.tracklet_id),
        };
        for w in self.frames.windows(2) {
            if w[1].frame_index <= w[0].frame_index {
                return Err(bad("frame indices are not strictly increasing".into()));
            }
        }
        let dim = feature_dim.or_else(|| self.frames.first().map(|f| f.features.len()));
        if let Some(d) = dim {
            for f in &self.frames {
                if f.features.len() != d {
                    return Err(bad(format!("frame {} has {} features, expected {d}", f.frame_index, f.features.len())));
                }
                if !(0.0..=1.0).contains(&f.confidence) {
                    return Err(bad(format!("confidence {} outside [0, 1]", f.confidence)));
                }
            }
        }
        Ok(())
    }
}

/// Tracklets indexed by procedure, in ascending id order.
pub fn by_procedure(tracklets: &[TrackletRecord]) -> BTreeMap<ProcedureId, Vec<&TrackletRecord>> {
    let mut map: BTreeMap<ProcedureId, Vec<&TrackletRecord>> = BTreeMap::new();
    for t in tracklets {
        map.entry(t.procedure_id).or_default().push(t);
    }
    for v in map.values_mut() {
        v.sort_by_key(|t| t.tracklet_id);
    }
    map
}

/// Ground-truth entity per tracklet, for labelled tracklets.
pub fn ground_truth(tracklets: &[TrackletRecord]) -> BTreeMap<TrackletId, EntityId> {
    tracklets
        .iter()
        .filter_map(|t| t.entity_id.map(|e| (t.tracklet_id, e)))
        .collect()
}

/// Splits tracklets by procedure into consecutive fractions of the sorted
/// procedure list, returning `fractions.len() + 1` parts; the last part
/// takes the remaining procedures.
pub fn split_by_procedure(tracklets: &[TrackletRecord], fractions: &[f64]) -> Vec<Vec<TrackletRecord>> {
    let procs: Vec<ProcedureId> = by_procedure(tracklets).keys().copied().collect();
    let n = procs.len();
    let mut bounds = Vec::with_capacity(fractions.len() + 1);
    let mut acc = 0.0;
    bounds.push(0);
    for f in fractions {
        acc += f;
        bounds.push(((acc * n as f64).round() as usize).min(n));
    }
    bounds.push(n);
    bounds
        .windows(2)
        .map(|w| {
            let keep: std::collections::BTreeSet<_> = procs[w[0]..w[1]].iter().copied().collect();
            tracklets
                .iter()
                .filter(|t| keep.contains(&t.procedure_id))
                .cloned()
                .collect()
        })
        .collect()
}
