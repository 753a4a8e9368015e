use rand::Rng;

use crate::diffcore::layers::{softmax_row, softmax_row_backward, Layer, Linear};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::impl_parameterized;

/// Scaled dot-product self-attention over a token set.
///
/// No positional encoding and no mask: each token attends to every token,
/// so outputs are permutation-equivariant in the input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl_parameterized!(MultiHeadAttention { tensors: [], children: [query, key, value, output] });

pub struct AttentionCache {
    input: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention weights per head, each tokens×tokens.
    probs: Vec<Tensor>,
    concat: Tensor,
}

fn check_heads(width: usize, heads: usize) -> Result<()> {
    if heads == 0 || width % heads != 0 {
        return Err(Error::Config(format!(
            "model width {width} is not divisible by {heads} attention heads"
        )));
    }
    Ok(())
}

impl MultiHeadAttention {
    pub fn new(query: Linear, key: Linear, value: Linear, output: Linear, heads: usize) -> Result<Self> {
        let width = query.d_out();
        check_heads(width, heads)?;
        for l in [&query, &key, &value, &output] {
            if l.d_in() != width || l.d_out() != width {
                return Err(Error::Dimension {
                    op: "multi_head_attention",
                    left: (width, width),
                    right: l.weight.shape(),
                });
            }
        }
        Ok(MultiHeadAttention {
            query,
            key,
            value,
            output,
            heads,
        })
    }

    pub fn init<R: Rng + ?Sized>(width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        check_heads(width, heads)?;
        Ok(MultiHeadAttention {
            query: Linear::init(width, width, rng),
            key: Linear::init(width, width, rng),
            value: Linear::init(width, width, rng),
            output: Linear::init(width, width, rng),
            heads,
        })
    }

    pub fn width(&self) -> usize {
        self.query.d_out()
    }

    fn head_dim(&self) -> usize {
        self.width() / self.heads
    }
}

impl Layer for MultiHeadAttention {
    type Cache = AttentionCache;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, AttentionCache)> {
        check_heads(self.width(), self.heads)?;
        let q = self.query.apply(x)?;
        let k = self.key.apply(x)?;
        let v = self.value.apply(x)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let tokens = x.rows();
        let mut concat = Tensor::zeros(tokens, self.width());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = q.slice_cols(lo, hi);
            let kh = k.slice_cols(lo, hi);
            let vh = v.slice_cols(lo, hi);
            let mut p = qh.matmul_t(&kh)?;
            for r in 0..tokens {
                let scaled: Vec<f64> = p.row(r).iter().map(|s| s * scale).collect();
                p.row_mut(r).copy_from_slice(&softmax_row(&scaled));
            }
            concat.set_cols(lo, &p.matmul(&vh)?);
            probs.push(p);
        }
        let out = self.output.apply(&concat)?;
        Ok((
            out,
            AttentionCache {
                input: x.clone(),
                q,
                k,
                v,
                probs,
                concat,
            },
        ))
    }

    fn backward(&self, cache: &AttentionCache, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
        let d_concat = self.output.backward(&cache.concat, grad_out, &mut grads.output)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let tokens = cache.input.rows();
        let mut dq = Tensor::zeros(tokens, self.width());
        let mut dk = Tensor::zeros(tokens, self.width());
        let mut dv = Tensor::zeros(tokens, self.width());
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let p = &cache.probs[h];
            let d_oh = d_concat.slice_cols(lo, hi);
            let qh = cache.q.slice_cols(lo, hi);
            let kh = cache.k.slice_cols(lo, hi);
            let vh = cache.v.slice_cols(lo, hi);
            dv.set_cols(lo, &p.t_matmul(&d_oh)?);
            let dp = d_oh.matmul_t(&vh)?;
            let mut ds = Tensor::zeros(tokens, tokens);
            for r in 0..tokens {
                let row = softmax_row_backward(p.row(r), dp.row(r));
                for (d, s) in ds.row_mut(r).iter_mut().zip(row) {
                    *d = s * scale;
                }
            }
            dq.set_cols(lo, &ds.matmul(&kh)?);
            dk.set_cols(lo, &ds.t_matmul(&qh)?);
        }
        let mut dx = self.query.backward(&cache.input, &dq, &mut grads.query)?;
        dx.add_assign(&self.key.backward(&cache.input, &dk, &mut grads.key)?)?;
        dx.add_assign(&self.value.backward(&cache.input, &dv, &mut grads.value)?)?;
        Ok(dx)
    }
}

/// Functional form: attention of `x` under `params`, using `heads` heads.
pub fn multi_head_attention(x: &Tensor, params: &MultiHeadAttention, heads: usize) -> Result<Tensor> {
    let mut p = params.clone();
    p.heads = heads;
    check_heads(p.width(), heads)?;
    p.apply(x)
}
