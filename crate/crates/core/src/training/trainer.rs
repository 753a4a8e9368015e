use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrackletRecord;
use crate::diffcore::params::{accumulate, zeros_like};
use crate::diffcore::{Layer, Parameterized, Tensor};
use crate::encoders::{EncoderConfig, JointEncoder, ReidModel};
use crate::error::{Error, Result};
use crate::training::batch::{BatchSampler, ContrastiveBatch, SplitFractions, ViewMode};
use crate::training::loss::{nt_xent_loss, LossConfig};
use crate::training::optim::{Lars, LarsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Only the single-frame encoder.
    SingleFrame,
    /// Single-frame encoder, then the joint encoder initialized from it.
    MultiView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub mode: TrainMode,
    /// Optimizer steps for the single-frame encoder.
    pub frame_steps: usize,
    /// Optimizer steps for the joint encoder.
    pub joint_steps: usize,
    pub batch_size: usize,
    pub views_per_sample: usize,
    pub split: SplitFractions,
    pub freeze_backbone: bool,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub optimizer: LarsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            mode: TrainMode::MultiView,
            frame_steps: 1000,
            joint_steps: 1000,
            batch_size: 16,
            views_per_sample: 8,
            split: SplitFractions::default(),
            freeze_backbone: false,
            encoder: EncoderConfig::default(),
            loss: LossConfig::default(),
            optimizer: LarsConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.split.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.views_per_sample == 0 || self.views_per_sample > self.encoder.max_views {
            return Err(Error::Config(format!(
                "views_per_sample must be in 1..={}, got {}",
                self.encoder.max_views, self.views_per_sample
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ReidModel,
    /// Phase-one steps followed by phase-two steps, numbered consecutively.
    pub loss_curve: Vec<LossPoint>,
}

/// Two-phase contrastive training, deterministic for a given config.
pub fn train_reid(tracklets: &[TrackletRecord], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut model = ReidModel::init(&cfg.encoder, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut curve = Vec::new();
    if cfg.frame_steps > 0 {
        let sampler = BatchSampler::new(tracklets, ViewMode::SingleFrame, 1, cfg.split)?;
        let mut opt = Lars::new(cfg.optimizer.clone())?;
        for _ in 0..cfg.frame_steps {
            let batch = sampler.sample(cfg.batch_size, &mut rng)?;
            let x = Tensor::vstack(&batch.views.iter().collect::<Vec<_>>())?;
            let (emb, cache) = model.frame.forward(&x)?;
            let out = nt_xent_loss(&emb, &cfg.loss)?;
            let mut grads = zeros_like(&model.frame);
            model.frame.backward(&cache, &out.grad, &mut grads)?;
            opt.step(&mut model.frame, &grads)?;
            curve.push(LossPoint { step: curve.len(), loss: out.loss });
        }
    }

    if cfg.mode == TrainMode::MultiView && cfg.joint_steps > 0 {
        model.joint.backbone = model.frame.backbone.clone();
        let sampler = BatchSampler::new(tracklets, ViewMode::MultiView, cfg.views_per_sample, cfg.split)?;
        let mut opt = Lars::new(cfg.optimizer.clone())?;
        for _ in 0..cfg.joint_steps {
            let batch = sampler.sample(cfg.batch_size, &mut rng)?;
            let (loss, mut grads) = joint_loss_and_grads(&model.joint, &batch, &cfg.loss)?;
            if cfg.freeze_backbone {
                for (_, g) in grads.backbone.params_mut() {
                    g.data_mut().fill(0.0);
                }
            }
            opt.step(&mut model.joint, &grads)?;
            curve.push(LossPoint { step: curve.len(), loss });
        }
    }
    Ok(TrainOutput { model, loss_curve: curve })
}

/// Per-sample forward and backward run in parallel; gradients are summed
/// in sample order so the result does not depend on scheduling.
pub fn joint_loss_and_grads(
    joint: &JointEncoder,
    batch: &ContrastiveBatch,
    loss_cfg: &LossConfig,
) -> Result<(f64, JointEncoder)> {
    let forwards = batch
        .views
        .par_iter()
        .map(|v| joint.forward(v))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<&[f64]> = forwards.iter().map(|(y, _)| y.row(0)).collect();
    let emb = Tensor::from_rows(&rows)?;
    let out = nt_xent_loss(&emb, loss_cfg)?;
    let per_sample = forwards
        .par_iter()
        .enumerate()
        .map(|(i, (_, cache))| {
            let mut g = zeros_like(joint);
            joint.backward(cache, &Tensor::row_vector(out.grad.row(i)), &mut g)?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = zeros_like(joint);
    for g in &per_sample {
        accumulate(&mut grads, g);
    }
    Ok((out.loss, grads))
}

pub fn write_loss_curve(path: &Path, curve: &[LossPoint]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["step", "loss"])?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
