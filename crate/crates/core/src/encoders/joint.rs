use std::cmp::Ordering;

use rand::Rng;

use crate::diffcore::layers::{L2Cache, LayerNormCache, MlpCache};
use crate::diffcore::transformer::BlockCache;
use crate::diffcore::{L2Normalize, Layer, LayerNorm, Mlp, Stack, Tensor, TransformerBlock};
use crate::encoders::{frames_tensor, Embedding, EncoderConfig, LN_EPS};
use crate::error::{Error, Result};
use crate::impl_parameterized;

/// Multi-view tracklet encoder.
///
/// Per-frame representations from the backbone are stacked under a learned
/// CLS token and passed through pre-norm transformer blocks; the CLS output
/// is layer-normalized, projected and L2-normalized. There is no positional
/// encoding, so the frames form an unordered set.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEncoder {
    pub backbone: Mlp,
    pub cls: Tensor,
    pub blocks: Stack<TransformerBlock>,
    pub final_norm: LayerNorm,
    pub head: Mlp,
    pub max_views: usize,
}

impl_parameterized!(JointEncoder { tensors: [cls], children: [backbone, blocks, final_norm, head] });

pub struct JointCache {
    tokens: usize,
    backbone: MlpCache,
    blocks: Vec<BlockCache>,
    final_norm: LayerNormCache,
    head: MlpCache,
    norm: L2Cache,
}

impl JointEncoder {
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let backbone = Mlp::init(&[cfg.feature_dim, cfg.hidden_dim, cfg.hidden_dim], rng);
        let cls = Tensor::normal(1, cfg.hidden_dim, 0.02, rng);
        let layers = (0..cfg.blocks)
            .map(|_| TransformerBlock::init(cfg.hidden_dim, cfg.heads, cfg.ffn_dim, LN_EPS, rng))
            .collect::<Result<Vec<_>>>()?;
        let head = Mlp::init(&[cfg.hidden_dim, cfg.hidden_dim, cfg.embed_dim], rng);
        Ok(JointEncoder {
            backbone,
            cls,
            blocks: Stack { layers },
            final_norm: LayerNorm::new(cfg.hidden_dim, LN_EPS),
            head,
            max_views: cfg.max_views,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.d_in()
    }
}

impl Layer for JointEncoder {
    type Cache = JointCache;

    /// `x` holds one tracklet's frames (m×F); the output is 1×D.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, JointCache)> {
        if x.rows() == 0 {
            return Err(Error::EmptyTracklet);
        }
        if x.cols() != self.feature_dim() {
            return Err(Error::Dimension {
                op: "encode_tracklet_joint",
                left: x.shape(),
                right: self.backbone.layers[0].weight.shape(),
            });
        }
        let (rep, backbone) = self.backbone.forward(x)?;
        let tokens = Tensor::vstack(&[&self.cls, &rep])?;
        let (ctx, blocks) = self.blocks.forward(&tokens)?;
        let (normed, final_norm) = self.final_norm.forward(&ctx.slice_rows(0, 1))?;
        let (proj, head) = self.head.forward(&normed)?;
        let (out, norm) = L2Normalize.forward(&proj)?;
        Ok((
            out,
            JointCache {
                tokens: tokens.rows(),
                backbone,
                blocks,
                final_norm,
                head,
                norm,
            },
        ))
    }

    fn backward(&self, cache: &JointCache, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
        let dproj = L2Normalize.backward(&cache.norm, grad_out, &mut L2Normalize)?;
        let dnormed = self.head.backward(&cache.head, &dproj, &mut grads.head)?;
        let dcls_out = self.final_norm.backward(&cache.final_norm, &dnormed, &mut grads.final_norm)?;
        let mut dctx = Tensor::zeros(cache.tokens, self.cls.cols());
        dctx.row_mut(0).copy_from_slice(dcls_out.row(0));
        let dtokens = self.blocks.backward(&cache.blocks, &dctx, &mut grads.blocks)?;
        for (g, d) in grads.cls.data_mut().iter_mut().zip(dtokens.row(0)) {
            *g += d;
        }
        let drep = dtokens.slice_rows(1, cache.tokens);
        self.backbone.backward(&cache.backbone, &drep, &mut grads.backbone)
    }
}

/// Joint embedding of a tracklet's frames.
///
/// Frames are put into a canonical order first; the encoder is
/// permutation-invariant mathematically and the canonical order makes the
/// result bitwise independent of the caller's frame order too.
pub fn encode_tracklet_joint<R: AsRef<[f64]>>(frames: &[R], params: &JointEncoder) -> Result<Embedding> {
    if frames.is_empty() {
        return Err(Error::EmptyTracklet);
    }
    if frames.len() > params.max_views {
        return Err(Error::Contract(format!(
            "{} views exceed the configured maximum of {}",
            frames.len(),
            params.max_views
        )));
    }
    let mut ordered: Vec<&[f64]> = frames.iter().map(AsRef::as_ref).collect();
    ordered.sort_by(|a, b| lexicographic(a, b));
    let x = frames_tensor(&ordered, params.feature_dim())?;
    Embedding::from_unit(params.apply(&x)?.into_data())
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}
