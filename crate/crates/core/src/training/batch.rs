use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ProcedureId, TrackletId, TrackletRecord};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// Two distinct frames of one tracklet form the positive pair.
    SingleFrame,
    /// Views drawn from the first and last segments of a split tracklet.
    MultiView,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub head: f64,
    pub tail: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            head: 1.0 / 3.0,
            tail: 1.0 / 3.0,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if !(self.head > 0.0 && self.tail > 0.0 && self.head + self.tail < 1.0) {
            return Err(Error::Config(format!(
                "split fractions ({}, {}) must be positive and sum below 1",
                self.head, self.tail
            )));
        }
        Ok(())
    }
}

fn floor_fraction(f: f64, n: usize) -> usize {
    // the epsilon absorbs representation error, e.g. 9 · (1/3)
    (f * n as f64 + 1e-9).floor() as usize
}

/// First and last segments of an `n`-frame tracklet; the middle is dropped.
pub fn split_segments(n: usize, fractions: SplitFractions) -> Result<(Range<usize>, Range<usize>)> {
    fractions.validate()?;
    let a = floor_fraction(fractions.head, n);
    let b = floor_fraction(fractions.tail, n);
    if a == 0 || b == 0 || a + b >= n {
        return Err(Error::SplitInfeasible {
            len: n,
            a: fractions.head,
            b: fractions.tail,
        });
    }
    Ok((0..a, n - b..n))
}

pub fn pseudo_positive_split(
    tracklet: &TrackletRecord,
    fractions: SplitFractions,
) -> Result<(Range<usize>, Range<usize>)> {
    split_segments(tracklet.len(), fractions)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleProvenance {
    pub procedure_id: ProcedureId,
    pub tracklet_id: TrackletId,
    /// Positions within the tracklet's frame list.
    pub views: Vec<usize>,
}

/// `2N` samples; sample `k` and `k + N` are the positive pair.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub n: usize,
    pub provenance: Vec<SampleProvenance>,
    /// One `views × F` feature matrix per sample.
    pub views: Vec<Tensor>,
}

/// Holds the tracklets eligible for a view mode, grouped by procedure.
pub struct BatchSampler<'a> {
    by_procedure: Vec<(ProcedureId, Vec<&'a TrackletRecord>)>,
    mode: ViewMode,
    views_per_sample: usize,
    fractions: SplitFractions,
}

impl<'a> BatchSampler<'a> {
    pub fn new(
        tracklets: &'a [TrackletRecord],
        mode: ViewMode,
        views_per_sample: usize,
        fractions: SplitFractions,
    ) -> Result<Self> {
        fractions.validate()?;
        if mode == ViewMode::MultiView && views_per_sample == 0 {
            return Err(Error::Config("views_per_sample must be positive".into()));
        }
        let mut grouped: BTreeMap<ProcedureId, Vec<&TrackletRecord>> = BTreeMap::new();
        for t in tracklets {
            let eligible = match mode {
                ViewMode::SingleFrame => t.len() >= 2,
                ViewMode::MultiView => split_segments(t.len(), fractions).is_ok(),
            };
            if eligible {
                grouped.entry(t.procedure_id).or_default().push(t);
            }
        }
        let mut by_procedure: Vec<_> = grouped.into_iter().collect();
        for (_, v) in by_procedure.iter_mut() {
            v.sort_by_key(|t| t.tracklet_id);
        }
        Ok(BatchSampler {
            by_procedure,
            mode,
            views_per_sample,
            fractions,
        })
    }

    pub fn procedures(&self) -> usize {
        self.by_procedure.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ContrastiveBatch> {
        if n < 2 {
            return Err(Error::Config(format!("batch needs at least 2 tracklets, got {n}")));
        }
        if self.by_procedure.len() < n {
            return Err(Error::InsufficientData {
                needed: n,
                available: self.by_procedure.len(),
            });
        }
        let picks = index::sample(rng, self.by_procedure.len(), n).into_vec();
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for p in picks {
            let (pid, candidates) = &self.by_procedure[p];
            let t = candidates[rng.random_range(0..candidates.len())];
            let (va, vb) = match self.mode {
                ViewMode::SingleFrame => {
                    let pair = index::sample(rng, t.len(), 2).into_vec();
                    (vec![pair[0]], vec![pair[1]])
                }
                ViewMode::MultiView => {
                    let (a, b) = split_segments(t.len(), self.fractions)?;
                    (
                        sample_views(a, self.views_per_sample, rng),
                        sample_views(b, self.views_per_sample, rng),
                    )
                }
            };
            first.push((*pid, t, va));
            second.push((*pid, t, vb));
        }
        let mut provenance = Vec::with_capacity(2 * n);
        let mut views = Vec::with_capacity(2 * n);
        for (pid, t, idx) in first.into_iter().chain(second) {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| t.frames[i].features.as_slice()).collect();
            views.push(Tensor::from_rows(&rows)?);
            provenance.push(SampleProvenance {
                procedure_id: pid,
                tracklet_id: t.tracklet_id,
                views: idx,
            });
        }
        Ok(ContrastiveBatch { n, provenance, views })
    }
}

/// Uniform without replacement, or with replacement when the segment is
/// shorter than `k`.
fn sample_views<R: Rng + ?Sized>(segment: Range<usize>, k: usize, rng: &mut R) -> Vec<usize> {
    let len = segment.len();
    if len >= k {
        index::sample(rng, len, k).into_iter().map(|i| segment.start + i).collect()
    } else {
        (0..k).map(|_| segment.start + rng.random_range(0..len)).collect()
    }
}

pub fn build_batch<R: Rng + ?Sized>(
    tracklets: &[TrackletRecord],
    n: usize,
    mode: ViewMode,
    views_per_sample: usize,
    rng: &mut R,
) -> Result<ContrastiveBatch> {
    BatchSampler::new(tracklets, mode, views_per_sample, SplitFractions::default())?.sample(n, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub fps: f64,
    pub min_duration_s: f64,
    pub min_high_conf: usize,
    pub conf_threshold: f64,
    /// Keep only the longest surviving tracklet of each procedure.
    pub longest_per_procedure: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            fps: 10.0,
            min_duration_s: 1.0,
            min_high_conf: 15,
            conf_threshold: 0.5,
            longest_per_procedure: true,
        }
    }
}

/// Drops short or low-confidence tracklets, then keeps the longest
/// survivor of each procedure (ties go to the lowest tracklet id) unless
/// `longest_per_procedure` is off.
///
/// Duration is frame count divided by `fps`; a detection is high-confidence
/// when its confidence is at least `conf_threshold`.
pub fn filter_tracklets(tracklets: &[TrackletRecord], cfg: &FilterConfig) -> Result<Vec<TrackletRecord>> {
    if !(cfg.fps > 0.0) {
        return Err(Error::Config(format!("fps must be positive, got {}", cfg.fps)));
    }
    let survivors = tracklets.iter().filter(|t| {
        let duration = t.len() as f64 / cfg.fps;
        let high = t.frames.iter().filter(|f| f.confidence >= cfg.conf_threshold).count();
        duration >= cfg.min_duration_s && high >= cfg.min_high_conf
    });
    if !cfg.longest_per_procedure {
        return Ok(survivors.cloned().collect());
    }
    let mut best: BTreeMap<ProcedureId, &TrackletRecord> = BTreeMap::new();
    for t in survivors {
        best.entry(t.procedure_id)
            .and_modify(|cur| {
                if t.len() > cur.len() || (t.len() == cur.len() && t.tracklet_id < cur.tracklet_id) {
                    *cur = t;
                }
            })
            .or_insert(t);
    }
    Ok(best.into_values().cloned().collect())
}
