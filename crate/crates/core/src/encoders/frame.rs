use rand::Rng;

use crate::diffcore::layers::{L2Cache, MlpCache};
use crate::diffcore::{l2_norm, L2Normalize, Layer, Mlp, Tensor};
use crate::encoders::{frames_tensor, Embedding, EncoderConfig};
use crate::error::{Error, Result};
use crate::impl_parameterized;

/// Single-frame encoder: an MLP backbone producing the H-dimensional
/// representation, then an MLP projection head and L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEncoder {
    pub backbone: Mlp,
    pub head: Mlp,
}

impl_parameterized!(FrameEncoder { tensors: [], children: [backbone, head] });

pub struct FrameCache {
    backbone: MlpCache,
    head: MlpCache,
    norm: L2Cache,
}

impl FrameEncoder {
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        FrameEncoder {
            backbone: Mlp::init(&[cfg.feature_dim, cfg.hidden_dim, cfg.hidden_dim], rng),
            head: Mlp::init(&[cfg.hidden_dim, cfg.hidden_dim, cfg.embed_dim], rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.d_in()
    }

    /// Pre-projection representations, one row per frame.
    pub fn represent(&self, frames: &Tensor) -> Result<Tensor> {
        self.backbone.apply(frames)
    }

    /// Unit-norm embeddings, one row per frame.
    pub fn embed(&self, frames: &Tensor) -> Result<Tensor> {
        self.apply(frames)
    }
}

impl Layer for FrameEncoder {
    type Cache = FrameCache;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, FrameCache)> {
        if x.cols() != self.feature_dim() {
            return Err(Error::Dimension {
                op: "encode_frame",
                left: x.shape(),
                right: self.backbone.layers[0].weight.shape(),
            });
        }
        let (rep, backbone) = self.backbone.forward(x)?;
        let (proj, head) = self.head.forward(&rep)?;
        let (out, norm) = L2Normalize.forward(&proj)?;
        Ok((out, FrameCache { backbone, head, norm }))
    }

    fn backward(&self, cache: &FrameCache, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
        let dproj = L2Normalize.backward(&cache.norm, grad_out, &mut L2Normalize)?;
        let drep = self.head.backward(&cache.head, &dproj, &mut grads.head)?;
        self.backbone.backward(&cache.backbone, &drep, &mut grads.backbone)
    }
}

/// Embeds one frame's feature vector.
pub fn encode_frame(features: &[f64], params: &FrameEncoder) -> Result<Embedding> {
    let x = frames_tensor(&[features], params.feature_dim())?;
    Embedding::from_unit(params.embed(&x)?.into_data())
}

/// Mean of per-frame embeddings, renormalized.
pub fn encode_tracklet_average<R: AsRef<[f64]>>(frames: &[R], params: &FrameEncoder) -> Result<Embedding> {
    if frames.is_empty() {
        return Err(Error::EmptyTracklet);
    }
    let x = frames_tensor(frames, params.feature_dim())?;
    let emb = params.embed(&x)?;
    let mut mean = emb.sum_rows().into_data();
    let m = frames.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    let n = l2_norm(&mean);
    if n < 1e-12 {
        return Err(Error::DegenerateAverage(n));
    }
    Embedding::normalized(mean)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffcore::Parameterized;

    fn small() -> EncoderConfig {
        EncoderConfig {
            feature_dim: 6,
            hidden_dim: 8,
            embed_dim: 5,
            heads: 2,
            ffn_dim: 16,
            blocks: 1,
            max_views: 8,
        }
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = FrameEncoder::init(&small(), &mut rng);
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let a = encode_frame(&x, &enc).unwrap();
        let b = encode_frame(&x, &enc).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(l2_norm(a.as_slice()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_weights_yield_normalized_final_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = FrameEncoder::init(&small(), &mut rng);
        for (_, t) in enc.params_mut() {
            t.data_mut().fill(0.0);
        }
        let b = [3.0, 0.0, -4.0, 0.0, 0.0];
        enc.head.layers[1].bias.data_mut().copy_from_slice(&b);
        let e = encode_frame(&[1.0; 6], &enc).unwrap();
        assert_eq!(e.as_slice(), &[0.6, 0.0, -0.8, 0.0, 0.0]);
    }

    #[test]
    fn wrong_feature_length_is_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = FrameEncoder::init(&small(), &mut rng);
        assert!(matches!(encode_frame(&[1.0; 5], &enc), Err(Error::Dimension { .. })));
    }

    #[test]
    fn average_of_identical_frames_is_frame_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let enc = FrameEncoder::init(&small(), &mut rng);
        let x = vec![0.3, -0.2, 0.9, 0.1, 0.0, 0.5];
        let single = encode_frame(&x, &enc).unwrap();
        let avg = encode_tracklet_average(&[x.clone(), x.clone(), x], &enc).unwrap();
        for (a, b) in avg.as_slice().iter().zip(single.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn opposite_embeddings_average_is_degenerate() {
        // Backbone/head zero except a final weight reading feature 0 straight through,
        // so frames with opposite feature 0 embed to e and −e.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut enc = FrameEncoder::init(&small(), &mut rng);
        for (_, t) in enc.params_mut() {
            t.data_mut().fill(0.0);
        }
        enc.backbone.layers[0].weight.set(0, 0, 1.0);
        enc.backbone.layers[0].weight.set(0, 1, -1.0);
        enc.backbone.layers[1].weight.set(0, 0, 1.0);
        enc.backbone.layers[1].weight.set(1, 0, -1.0);
        enc.head.layers[0].weight.set(0, 0, 1.0);
        enc.head.layers[0].weight.set(0, 1, -1.0);
        enc.head.layers[1].weight.set(0, 0, 1.0);
        enc.head.layers[1].weight.set(1, 0, -1.0);
        let mut a = vec![0.0; 6];
        a[0] = 1.0;
        let mut b = vec![0.0; 6];
        b[0] = -1.0;
        let ea = encode_frame(&a, &enc).unwrap();
        let eb = encode_frame(&b, &enc).unwrap();
        assert_eq!(ea.as_slice()[0], 1.0);
        assert_eq!(eb.as_slice()[0], -1.0);
        assert!(matches!(encode_tracklet_average(&[a, b], &enc), Err(Error::DegenerateAverage(_))));
    }

    #[test]
    fn average_of_orthogonal_embeddings() {
        // Identity-like wiring: embeddings equal the (nonnegative) first two features.
        let cfg = EncoderConfig {
            feature_dim: 2,
            hidden_dim: 2,
            embed_dim: 2,
            heads: 1,
            ffn_dim: 2,
            blocks: 1,
            max_views: 8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut enc = FrameEncoder::init(&cfg, &mut rng);
        let eye = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        for l in enc.backbone.layers.iter_mut().chain(enc.head.layers.iter_mut()) {
            l.weight = eye.clone();
            l.bias = Tensor::zeros(1, 2);
        }
        let avg = encode_tracklet_average(&[vec![1.0, 0.0], vec![0.0, 1.0]], &enc).unwrap();
        let h = 0.5f64.sqrt();
        assert_abs_diff_eq!(avg.as_slice()[0], h, epsilon = 1e-15);
        assert_abs_diff_eq!(avg.as_slice()[1], h, epsilon = 1e-15);
    }

    #[test]
    fn empty_tracklet_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = FrameEncoder::init(&small(), &mut rng);
        let none: [Vec<f64>; 0] = [];
        assert!(matches!(encode_tracklet_average(&none, &enc), Err(Error::EmptyTracklet)));
    }
}
