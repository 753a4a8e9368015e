use rand::Rng;

use crate::diffcore::attention::{AttentionCache, MultiHeadAttention};
use crate::diffcore::layers::{Gelu, Layer, LayerNorm, LayerNormCache, Linear};
use crate::diffcore::{Parameterized, Tensor};
use crate::error::Result;
use crate::impl_parameterized;

/// Linear → GELU → Linear.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub expand: Linear,
    pub contract: Linear,
}

impl_parameterized!(FeedForward { tensors: [], children: [expand, contract] });

pub struct FeedForwardCache {
    input: Tensor,
    pre_act: Tensor,
    hidden: Tensor,
}

impl FeedForward {
    pub fn init<R: Rng + ?Sized>(width: usize, ffn_dim: usize, rng: &mut R) -> Self {
        FeedForward {
            expand: Linear::init(width, ffn_dim, rng),
            contract: Linear::init(ffn_dim, width, rng),
        }
    }
}

impl Layer for FeedForward {
    type Cache = FeedForwardCache;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, FeedForwardCache)> {
        let pre_act = self.expand.apply(x)?;
        let hidden = Gelu.apply(&pre_act)?;
        let out = self.contract.apply(&hidden)?;
        Ok((
            out,
            FeedForwardCache {
                input: x.clone(),
                pre_act,
                hidden,
            },
        ))
    }

    fn backward(&self, cache: &FeedForwardCache, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
        let dh = self.contract.backward(&cache.hidden, grad_out, &mut grads.contract)?;
        let dpre = Gelu.backward(&cache.pre_act, &dh, &mut Gelu)?;
        self.expand.backward(&cache.input, &dpre, &mut grads.expand)
    }
}

/// Pre-norm encoder block: `h = x + attn(ln1(x))`, `y = h + ffn(ln2(h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl_parameterized!(TransformerBlock { tensors: [], children: [ln1, attn, ln2, ffn] });

pub struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    ffn: FeedForwardCache,
}

impl TransformerBlock {
    pub fn init<R: Rng + ?Sized>(width: usize, heads: usize, ffn_dim: usize, eps: f64, rng: &mut R) -> Result<Self> {
        Ok(TransformerBlock {
            ln1: LayerNorm::new(width, eps),
            attn: MultiHeadAttention::init(width, heads, rng)?,
            ln2: LayerNorm::new(width, eps),
            ffn: FeedForward::init(width, ffn_dim, rng),
        })
    }
}

impl Layer for TransformerBlock {
    type Cache = BlockCache;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        let (n1, ln1) = self.ln1.forward(x)?;
        let (a, attn) = self.attn.forward(&n1)?;
        let h = x.add(&a)?;
        let (n2, ln2) = self.ln2.forward(&h)?;
        let (f, ffn) = self.ffn.forward(&n2)?;
        let y = h.add(&f)?;
        Ok((y, BlockCache { ln1, attn, ln2, ffn }))
    }

    fn backward(&self, cache: &BlockCache, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
        let dn2 = self.ffn.backward(&cache.ffn, grad_out, &mut grads.ffn)?;
        let mut dh = self.ln2.backward(&cache.ln2, &dn2, &mut grads.ln2)?;
        dh.add_assign(grad_out)?;
        let dn1 = self.attn.backward(&cache.attn, &dh, &mut grads.attn)?;
        let mut dx = self.ln1.backward(&cache.ln1, &dn1, &mut grads.ln1)?;
        dx.add_assign(&dh)?;
        Ok(dx)
    }
}

/// A stack of layers of one type applied in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack<L> {
    pub layers: Vec<L>,
}

impl<L: Parameterized> Parameterized for Stack<L> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.layers.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.layers.collect_mut(prefix, out);
    }
}

impl<L: Layer> Layer for Stack<L> {
    type Cache = Vec<L::Cache>;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<L::Cache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    fn backward(&self, cache: &Vec<L::Cache>, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(&cache[i], &g, &mut grads.layers[i])?;
        }
        Ok(g)
    }
}
