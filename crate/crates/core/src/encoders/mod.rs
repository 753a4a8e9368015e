//! Frame and multi-view tracklet encoders.

mod frame;
mod joint;
pub mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{l2_norm, Tensor};
use crate::error::{Error, Result};

pub use frame::{encode_frame, encode_tracklet_average, FrameEncoder};
pub use joint::{encode_tracklet_joint, JointEncoder};

/// Layer-norm epsilon used by every transformer block.
pub const LN_EPS: f64 = 1e-5;

/// Tolerance for the unit-norm contract on embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub blocks: usize,
    pub max_views: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            feature_dim: 32,
            hidden_dim: 64,
            embed_dim: 128,
            heads: 4,
            ffn_dim: 256,
            blocks: 3,
            max_views: 8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_views", self.max_views),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        let n = l2_norm(&values);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Contract(format!("cannot normalize vector of norm {n}")));
        }
        values.iter_mut().for_each(|v| *v /= n);
        Ok(Embedding(values))
    }

    /// Wraps an already unit-norm vector, checking the contract.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let n = l2_norm(&values);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!("embedding norm {n} is not 1")));
        }
        Ok(Embedding(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Everything the ReID pipeline learns: the single-frame encoder and the
/// joint multi-view encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ReidModel {
    pub config: EncoderConfig,
    pub frame: FrameEncoder,
    pub joint: JointEncoder,
}

crate::impl_parameterized!(ReidModel { tensors: [], children: [frame, joint] });

impl ReidModel {
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = FrameEncoder::init(config, &mut rng);
        let joint = JointEncoder::init(config, &mut rng)?;
        Ok(ReidModel {
            config: config.clone(),
            frame,
            joint,
        })
    }
}

/// Indices of up to `max_views` frames spread evenly over `len` frames.
pub fn uniform_view_indices(len: usize, max_views: usize) -> Vec<usize> {
    if len <= max_views {
        return (0..len).collect();
    }
    (0..max_views)
        .map(|i| ((i as f64 + 0.5) * len as f64 / max_views as f64).floor() as usize)
        .map(|i| i.min(len - 1))
        .collect()
}

pub(crate) fn frames_tensor<R: AsRef<[f64]>>(frames: &[R], feature_dim: usize) -> Result<Tensor> {
    for f in frames {
        if f.as_ref().len() != feature_dim {
            return Err(Error::Dimension {
                op: "encode",
                left: (1, feature_dim),
                right: (1, f.as_ref().len()),
            });
        }
    }
    Tensor::from_rows(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_indices_are_spread_and_distinct() {
        assert_eq!(uniform_view_indices(3, 8), vec![0, 1, 2]);
        let idx = uniform_view_indices(40, 8);
        assert_eq!(idx, vec![2, 7, 12, 17, 22, 27, 32, 37]);
        let idx = uniform_view_indices(9, 8);
        let mut d = idx.clone();
        d.dedup();
        assert_eq!(d.len(), 8);
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let cfg = EncoderConfig {
            heads: 5,
            ..EncoderConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
