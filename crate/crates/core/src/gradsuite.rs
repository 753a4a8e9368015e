//! Finite-difference sweep over every differentiable layer and over the
//! contrastive loss composed with each encoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::gradcheck::grad_check_detailed;
use crate::diffcore::{
    FeedForward, Gelu, L2Normalize, Layer, LayerNorm, Linear, Mlp, MultiHeadAttention, Parameterized, Relu, Softmax,
    Stack, Tensor, TransformerBlock,
};
use crate::encoders::{EncoderConfig, FrameEncoder, JointEncoder, LN_EPS};
use crate::error::{Error, Result};
use crate::training::{nt_xent_loss, LossConfig};

/// Pass bound on the maximum relative error.
pub const TOLERANCE: f64 = 1e-6;

/// Contrastive loss over `2N` samples of `views` rows each, encoded one
/// sample at a time; the output is the 1×1 loss.
#[derive(Debug, Clone)]
pub struct ContrastiveGraph<E> {
    pub encoder: E,
    pub views: usize,
    pub loss: LossConfig,
}

impl<E: Parameterized> Parameterized for ContrastiveGraph<E> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.encoder.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.encoder.collect_mut(prefix, out);
    }
}

pub struct ContrastiveCache<C> {
    samples: Vec<C>,
    grad: Tensor,
}

impl<E: Layer> Layer for ContrastiveGraph<E> {
    type Cache = ContrastiveCache<E::Cache>;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Self::Cache)> {
        if self.views == 0 || x.rows() % self.views != 0 {
            return Err(Error::Contract(format!("{} rows do not split into samples of {}", x.rows(), self.views)));
        }
        let mut rows = Vec::new();
        let mut samples = Vec::new();
        for s in 0..x.rows() / self.views {
            let (y, c) = self.encoder.forward(&x.slice_rows(s * self.views, (s + 1) * self.views))?;
            rows.push(y.row(0).to_vec());
            samples.push(c);
        }
        let out = nt_xent_loss(&Tensor::from_rows(&rows)?, &self.loss)?;
        Ok((Tensor::row_vector(&[out.loss]), ContrastiveCache { samples, grad: out.grad }))
    }

    fn backward(&self, cache: &Self::Cache, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
        let upstream = grad_out.get(0, 0);
        let mut parts = Vec::with_capacity(cache.samples.len());
        for (i, c) in cache.samples.iter().enumerate() {
            let mut g = Tensor::row_vector(cache.grad.row(i));
            g.scale(upstream);
            parts.push(self.encoder.backward(c, &g, &mut grads.encoder)?);
        }
        Tensor::vstack(&parts.iter().collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    pub seeds: u64,
    pub max_rel_error: f64,
    /// Tensor with the largest error, `input` or a parameter name.
    pub worst_tensor: String,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Moves every parameter away from its initialization so zero biases and
/// unit gains do not hide mistakes.
fn jitter<P: Parameterized, R: Rng + ?Sized>(p: &mut P, rng: &mut R) {
    for (_, t) in p.params_mut() {
        let noise = Tensor::normal(t.rows(), t.cols(), 0.3, rng);
        t.add_assign(&noise).expect("same shape");
    }
}

/// Central differences are meaningless across a ReLU kink, so draws with a
/// pre-activation closer than this to zero are replaced.
pub const KINK_MARGIN: f64 = 1e-4;

fn clear_of_kink(z: &Tensor) -> bool {
    z.data().iter().all(|v| v.abs() >= KINK_MARGIN)
}

fn mlp_clear_of_kinks(mlp: &Mlp, x: &Tensor) -> Result<bool> {
    let mut h = x.clone();
    let hidden = mlp.layers.len().saturating_sub(1);
    for layer in &mlp.layers[..hidden] {
        h = layer.apply(&h)?;
        if !clear_of_kink(&h) {
            return Ok(false);
        }
        h = h.map(|v| v.max(0.0));
    }
    Ok(true)
}

fn check<L: Layer>(name: &str, seeds: u64, build: impl Fn(&mut ChaCha8Rng) -> Result<(L, Tensor)>) -> Result<LayerCheck> {
    check_where(name, seeds, build, |_, _| Ok(true))
}

/// Like `check`, redrawing from the same stream until `admissible` holds.
fn check_where<L: Layer>(
    name: &str,
    seeds: u64,
    build: impl Fn(&mut ChaCha8Rng) -> Result<(L, Tensor)>,
    admissible: impl Fn(&L, &Tensor) -> Result<bool>,
) -> Result<LayerCheck> {
    let mut worst = (0.0f64, String::from("input"));
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layer, input) = loop {
            let (mut layer, input) = build(&mut rng)?;
            jitter(&mut layer, &mut rng);
            if admissible(&layer, &input)? {
                break (layer, input);
            }
        };
        for e in grad_check_detailed(&layer, &input, seed)? {
            if e.rel_error > worst.0 || e.rel_error.is_nan() {
                worst = (e.rel_error, e.name);
            }
        }
    }
    Ok(LayerCheck {
        layer: name.to_string(),
        seeds,
        max_rel_error: worst.0,
        worst_tensor: worst.1,
    })
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        feature_dim: 5,
        hidden_dim: 8,
        embed_dim: 6,
        heads: 2,
        ffn_dim: 12,
        blocks: 2,
        max_views: 4,
    }
}

/// Runs every check with `seeds` seeds each.
pub fn run_gradient_suite(seeds: u64) -> Result<Vec<LayerCheck>> {
    let x = |r: usize, c: usize, rng: &mut ChaCha8Rng| Tensor::normal(r, c, 1.0, rng);
    let enc = small_encoder();
    let loss = LossConfig { temperature: 0.5 };
    Ok(vec![
        check("linear", seeds, |rng| Ok((Linear::init(5, 4, rng), x(3, 5, rng))))?,
        check_where("relu", seeds, |rng| Ok((Relu, x(3, 5, rng))), |_, x| Ok(clear_of_kink(x)))?,
        check("gelu", seeds, |rng| Ok((Gelu, x(3, 5, rng))))?,
        check("layer_norm", seeds, |rng| Ok((LayerNorm::new(6, LN_EPS), x(3, 6, rng))))?,
        check("softmax", seeds, |rng| Ok((Softmax, x(3, 5, rng))))?,
        check("l2_normalize", seeds, |rng| Ok((L2Normalize, x(3, 5, rng))))?,
        check_where("mlp", seeds, |rng| Ok((Mlp::init(&[5, 7, 4], rng), x(3, 5, rng))), mlp_clear_of_kinks)?,
        check("attention", seeds, |rng| Ok((MultiHeadAttention::init(8, 2, rng)?, x(4, 8, rng))))?,
        check("feed_forward", seeds, |rng| Ok((FeedForward::init(8, 12, rng), x(4, 8, rng))))?,
        check("transformer_block", seeds, |rng| Ok((TransformerBlock::init(8, 2, 12, LN_EPS, rng)?, x(4, 8, rng))))?,
        check("transformer_stack", seeds, |rng| {
            let layers = (0..2).map(|_| TransformerBlock::init(8, 2, 12, LN_EPS, rng)).collect::<Result<Vec<_>>>()?;
            Ok((Stack { layers }, x(4, 8, rng)))
        })?,
        check("frame_encoder", seeds, |rng| Ok((FrameEncoder::init(&enc, rng), x(3, 5, rng))))?,
        check("joint_encoder", seeds, |rng| Ok((JointEncoder::init(&enc, rng)?, x(3, 5, rng))))?,
        check("nt_xent", seeds, |rng| {
            Ok((ContrastiveGraph { encoder: L2Normalize, views: 1, loss: loss.clone() }, x(6, 4, rng)))
        })?,
        check("nt_xent_frame_encoder", seeds, |rng| {
            Ok((ContrastiveGraph { encoder: FrameEncoder::init(&enc, rng), views: 1, loss: loss.clone() }, x(4, 5, rng)))
        })?,
        check("nt_xent_joint_encoder", seeds, |rng| {
            Ok((ContrastiveGraph { encoder: JointEncoder::init(&enc, rng)?, views: 3, loss: loss.clone() }, x(12, 5, rng)))
        })?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;

    #[test]
    fn suite_passes_with_few_seeds() {
        let report = run_gradient_suite(2).unwrap();
        assert_eq!(report.len(), 16);
        for c in &report {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn broken_gradient_is_caught() {
        /// Doubles its input but reports the identity gradient.
        #[derive(Debug, Clone)]
        struct Wrong;
        crate::impl_parameterized!(Wrong { tensors: [], children: [] });
        impl Layer for Wrong {
            type Cache = ();
            fn forward(&self, x: &Tensor) -> Result<(Tensor, ())> {
                Ok((x.map(|v| 2.0 * v), ()))
            }
            fn backward(&self, _: &(), g: &Tensor, _: &mut Self) -> Result<Tensor> {
                Ok(g.clone())
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = grad_check(&Wrong, &Tensor::normal(2, 3, 1.0, &mut rng), 0).unwrap();
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }

    #[test]
    fn kink_guard_rejects_near_zero_preactivations() {
        let mlp = Mlp {
            layers: vec![Linear {
                weight: Tensor::from_vec(1, 1, vec![1.0]).unwrap(),
                bias: Tensor::zeros(1, 1),
            }, Linear::init(1, 1, &mut ChaCha8Rng::seed_from_u64(0))],
        };
        assert!(!mlp_clear_of_kinks(&mlp, &Tensor::row_vector(&[2e-5])).unwrap());
        assert!(mlp_clear_of_kinks(&mlp, &Tensor::row_vector(&[-0.5])).unwrap());
    }

    #[test]
    fn contrastive_graph_matches_direct_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::normal(4, 3, 1.0, &mut rng);
        let g = ContrastiveGraph { encoder: L2Normalize, views: 1, loss: LossConfig::default() };
        let direct = nt_xent_loss(&L2Normalize.apply(&x).unwrap(), &LossConfig::default()).unwrap();
        assert_eq!(g.apply(&x).unwrap().get(0, 0), direct.loss);
        assert!(matches!(ContrastiveGraph { views: 3, ..g }.forward(&x), Err(Error::Contract(_))));
    }
}
