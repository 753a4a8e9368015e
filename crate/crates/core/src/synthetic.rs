//! Synthetic tracklet benchmark with known identities.
//!
//! Each entity has a latent identity `z`; each frame mixes it with a
//! temporally smooth nuisance `u` through fixed random maps:
//! `features = tanh(A·z + σ_v·B·u) + ε`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{EntityId, Frame, TrackletId, TrackletRecord};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::io::FrameScore;

/// AR(1) coefficient of the per-frame nuisance.
pub const NUISANCE_AR: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub procedures: usize,
    /// Inclusive range.
    pub entities_per_procedure: (usize, usize),
    pub tracklets_per_entity: (usize, usize),
    pub frames_per_tracklet: (usize, usize),
    pub feature_dim: usize,
    pub identity_dim: usize,
    pub nuisance_dim: usize,
    pub view_noise: f64,
    pub observation_noise: f64,
    pub fps: f64,
    /// Inclusive range of untracked frames between consecutive tracklets.
    pub gap_frames: (usize, usize),
    pub seed: u64,
    /// Seed for the mixing maps `A` and `B`; defaults to `seed`. Datasets
    /// sharing it share the feature model and differ only in their samples.
    pub mixing_seed: Option<u64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            procedures: 200,
            entities_per_procedure: (2, 2),
            tracklets_per_entity: (2, 4),
            frames_per_tracklet: (20, 40),
            feature_dim: 32,
            identity_dim: 8,
            nuisance_dim: 8,
            view_noise: 3.0,
            observation_noise: 0.1,
            fps: 10.0,
            gap_frames: (5, 30),
            seed: 0,
            mixing_seed: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("entities_per_procedure", self.entities_per_procedure),
            ("tracklets_per_entity", self.tracklets_per_entity),
            ("frames_per_tracklet", self.frames_per_tracklet),
        ];
        for (name, (lo, hi)) in ranges {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) must satisfy 1 ≤ lo ≤ hi")));
            }
        }
        if self.gap_frames.0 > self.gap_frames.1 {
            return Err(Error::Config("gap_frames range is reversed".into()));
        }
        if self.procedures == 0 || self.feature_dim == 0 || self.identity_dim == 0 {
            return Err(Error::Config("procedures, feature_dim and identity_dim must be positive".into()));
        }
        if !(self.view_noise >= 0.0 && self.observation_noise >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub tracklets: Vec<TrackletRecord>,
    pub ground_truth: BTreeMap<TrackletId, EntityId>,
}

fn normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let f = cfg.feature_dim;
    let mut mix_rng = ChaCha8Rng::seed_from_u64(cfg.mixing_seed.unwrap_or(cfg.seed));
    // unit-variance pre-activations for standard normal inputs
    let a = Tensor::normal(f, cfg.identity_dim, (1.0 / cfg.identity_dim as f64).sqrt(), &mut mix_rng);
    let b = Tensor::normal(f, cfg.nuisance_dim, (1.0 / cfg.nuisance_dim.max(1) as f64).sqrt(), &mut mix_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let obs = Normal::new(0.0, cfg.observation_noise).map_err(|e| Error::Config(e.to_string()))?;
    let innovation = (1.0 - NUISANCE_AR * NUISANCE_AR).sqrt();

    let mut tracklets = Vec::new();
    let mut next_entity: EntityId = 0;
    let mut next_tracklet: TrackletId = 0;
    for procedure in 0..cfg.procedures as u64 {
        let n_entities = rng.random_range(cfg.entities_per_procedure.0..=cfg.entities_per_procedure.1);
        let mut plan = Vec::new();
        for _ in 0..n_entities {
            let entity = next_entity;
            next_entity += 1;
            let z = normal_vec(cfg.identity_dim, &mut rng);
            let az: Vec<f64> = (0..f).map(|r| a.row(r).iter().zip(&z).map(|(x, y)| x * y).sum()).collect();
            let count = rng.random_range(cfg.tracklets_per_entity.0..=cfg.tracklets_per_entity.1);
            for _ in 0..count {
                plan.push((entity, az.clone()));
            }
        }
        plan.shuffle(&mut rng);

        let mut cursor: u64 = 0;
        for (entity, az) in plan {
            cursor += rng.random_range(cfg.gap_frames.0..=cfg.gap_frames.1) as u64;
            let len = rng.random_range(cfg.frames_per_tracklet.0..=cfg.frames_per_tracklet.1);
            let mut u = normal_vec(cfg.nuisance_dim, &mut rng);
            let mut frames = Vec::with_capacity(len);
            for k in 0..len {
                if k > 0 {
                    for ui in u.iter_mut() {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        *ui = NUISANCE_AR * *ui + innovation * e;
                    }
                }
                let features = (0..f)
                    .map(|r| {
                        let bu: f64 = b.row(r).iter().zip(&u).map(|(x, y)| x * y).sum();
                        (az[r] + cfg.view_noise * bu).tanh() + obs.sample(&mut rng)
                    })
                    .collect();
                let frame_index = cursor + k as u64;
                frames.push(Frame {
                    frame_index,
                    timestamp: frame_index as f64 / cfg.fps,
                    confidence: rng.random_range(0.3..=1.0),
                    features,
                });
            }
            cursor += len as u64;
            tracklets.push(TrackletRecord {
                tracklet_id: next_tracklet,
                procedure_id: procedure,
                entity_id: Some(entity),
                frames,
            });
            next_tracklet += 1;
        }
    }
    let ground_truth = crate::data::ground_truth(&tracklets);
    Ok(SyntheticDataset { tracklets, ground_truth })
}

/// Fair-coin binary label per entity.
pub fn random_class_map(tracklets: &[TrackletRecord], seed: u64) -> BTreeMap<EntityId, bool> {
    let entities: std::collections::BTreeSet<EntityId> = tracklets.iter().filter_map(|t| t.entity_id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entities.into_iter().map(|e| (e, rng.random_bool(0.5))).collect()
}

/// Per-frame classifier scores `clamp(N(μ_label, σ²), 0, 1)` with class means
/// `0.5 ± separability / 2`.
pub fn inject_frame_scores(
    tracklets: &[TrackletRecord],
    class_map: &BTreeMap<EntityId, bool>,
    separability: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<FrameScore>> {
    if !(0.0..=1.0).contains(&separability) || !(sigma >= 0.0) {
        return Err(Error::Config(format!(
            "separability must be in [0, 1] and sigma non-negative, got {separability}, {sigma}"
        )));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for t in tracklets {
        let entity = t.entity_id.ok_or(Error::MissingGroundTruth(t.tracklet_id))?;
        let label = *class_map.get(&entity).ok_or(Error::MissingLabel(entity))?;
        let mu = if label { 0.5 + separability / 2.0 } else { 0.5 - separability / 2.0 };
        for f in &t.frames {
            out.push(FrameScore {
                tracklet_id: t.tracklet_id,
                frame_index: f.frame_index,
                score: (mu + noise.sample(&mut rng)).clamp(0.0, 1.0),
            });
        }
    }
    Ok(out)
}
