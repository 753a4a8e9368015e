use rand::Rng;

use crate::diffcore::{Parameterized, Tensor};
use crate::error::{Error, Result};
use crate::impl_parameterized;

/// A differentiable map with analytic reverse-mode gradients.
///
/// `grads` has the same structure as the layer; `backward` adds this call's
/// parameter gradients into it and returns the input gradient.
pub trait Layer: Parameterized + Clone {
    type Cache;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Self::Cache)>;

    fn backward(&self, cache: &Self::Cache, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor>;

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x).map(|(y, _)| y)
    }
}

/// `out[i] = x[i]·W + b`.
pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut out = x.matmul(weight)?;
    out.add_row_broadcast(bias)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl_parameterized!(Linear { tensors: [weight, bias], children: [] });

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::Dimension {
                op: "linear",
                left: weight.shape(),
                right: bias.shape(),
            });
        }
        Ok(Linear { weight, bias })
    }

    /// Uniform(±√(1/fan_in)) weights, zero bias.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / d_in as f64).sqrt();
        Linear {
            weight: Tensor::uniform(d_in, d_out, bound, rng),
            bias: Tensor::zeros(1, d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }
}

impl Layer for Linear {
    type Cache = Tensor;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((linear_forward(x, &self.weight, &self.bias)?, x.clone()))
    }

    fn backward(&self, x: &Tensor, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
        grads.weight.add_assign(&x.t_matmul(grad_out)?)?;
        grads.bias.add_assign(&grad_out.sum_rows())?;
        grad_out.matmul_t(&self.weight)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Relu;

impl_parameterized!(Relu { tensors: [], children: [] });

impl Layer for Relu {
    type Cache = Tensor;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((x.map(|v| v.max(0.0)), x.clone()))
    }

    fn backward(&self, x: &Tensor, grad_out: &Tensor, _: &mut Self) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
            if xv <= 0.0 {
                *gv = 0.0;
            }
        }
        Ok(g)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Gelu;

impl_parameterized!(Gelu { tensors: [], children: [] });

impl Layer for Gelu {
    type Cache = Tensor;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((x.map(gelu), x.clone()))
    }

    fn backward(&self, x: &Tensor, grad_out: &Tensor, _: &mut Self) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
            *gv *= gelu_grad(xv);
        }
        Ok(g)
    }
}

/// Normalizes one row with population variance, then applies gain and shift.
pub fn layer_norm(x: &[f64], gain: &[f64], shift: &[f64], eps: f64) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .zip(gain)
        .zip(shift)
        .map(|((v, g), s)| (v - mean) * inv * g + s)
        .collect()
}

/// Row-wise layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub shift: Tensor,
    pub eps: f64,
}

impl_parameterized!(LayerNorm { tensors: [gain, shift], children: [] });

pub struct LayerNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize, eps: f64) -> Self {
        LayerNorm {
            gain: Tensor::filled(1, dim, 1.0),
            shift: Tensor::zeros(1, dim),
            eps,
        }
    }
}

impl Layer for LayerNorm {
    type Cache = LayerNormCache;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        if x.cols() != self.gain.cols() {
            return Err(Error::Dimension {
                op: "layer_norm",
                left: x.shape(),
                right: self.gain.shape(),
            });
        }
        let d = x.cols() as f64;
        let mut normalized = Tensor::zeros(x.rows(), x.cols());
        let mut out = Tensor::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std.push(inv);
            let nrow = normalized.row_mut(r);
            for (n, v) in nrow.iter_mut().zip(row) {
                *n = (v - mean) * inv;
            }
            let orow = out.row_mut(r);
            for (c, o) in orow.iter_mut().enumerate() {
                *o = normalized.get(r, c) * self.gain.data()[c] + self.shift.data()[c];
            }
        }
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    fn backward(&self, cache: &LayerNormCache, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
        let (rows, cols) = grad_out.shape();
        let d = cols as f64;
        let mut dx = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let go = grad_out.row(r);
            let xh = cache.normalized.row(r);
            for c in 0..cols {
                grads.gain.data_mut()[c] += go[c] * xh[c];
                grads.shift.data_mut()[c] += go[c];
            }
            let dxh: Vec<f64> = go.iter().zip(self.gain.data()).map(|(g, w)| g * w).collect();
            let mean_dxh = dxh.iter().sum::<f64>() / d;
            let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            let inv = cache.inv_std[r];
            for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
                *out = inv * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
            }
        }
        Ok(dx)
    }
}

/// Max-subtracted softmax of one row.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Backward of a row softmax given its output `p` and upstream `dp`.
pub fn softmax_row_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - inner)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Softmax;

impl_parameterized!(Softmax { tensors: [], children: [] });

impl Layer for Softmax {
    type Cache = Tensor;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&softmax_row(x.row(r)));
        }
        Ok((out.clone(), out))
    }

    fn backward(&self, p: &Tensor, grad_out: &Tensor, _: &mut Self) -> Result<Tensor> {
        let mut dx = Tensor::zeros(p.rows(), p.cols());
        for r in 0..p.rows() {
            dx.row_mut(r)
                .copy_from_slice(&softmax_row_backward(p.row(r), grad_out.row(r)));
        }
        Ok(dx)
    }
}

/// Scales each row to unit Euclidean norm.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct L2Normalize;

impl_parameterized!(L2Normalize { tensors: [], children: [] });

pub struct L2Cache {
    out: Tensor,
    norms: Vec<f64>,
}

impl Layer for L2Normalize {
    type Cache = L2Cache;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, L2Cache)> {
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let n = crate::diffcore::l2_norm(x.row(r));
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Contract(format!("cannot normalize row {r} with norm {n}")));
            }
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok((out.clone(), L2Cache { out, norms }))
    }

    fn backward(&self, cache: &L2Cache, grad_out: &Tensor, _: &mut Self) -> Result<Tensor> {
        let mut dx = Tensor::zeros(grad_out.rows(), grad_out.cols());
        for r in 0..grad_out.rows() {
            let y = cache.out.row(r);
            let g = grad_out.row(r);
            let proj = crate::diffcore::dot(y, g);
            let n = cache.norms[r];
            for ((d, yv), gv) in dx.row_mut(r).iter_mut().zip(y).zip(g) {
                *d = (gv - yv * proj) / n;
            }
        }
        Ok(dx)
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl_parameterized!(Mlp { tensors: [], children: [layers] });

pub struct MlpCache {
    inputs: Vec<Tensor>,
}

impl Mlp {
    /// `dims = [d0, d1, ..., dk]` gives k linear layers.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Mlp { layers }
    }

    pub fn d_in(&self) -> usize {
        self.layers.first().map_or(0, Linear::d_in)
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, Linear::d_out)
    }
}

impl Layer for Mlp {
    type Cache = MlpCache;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = linear_forward(&h, &layer.weight, &layer.bias)?;
            inputs.push(h);
            h = if i < last { z.map(|v| v.max(0.0)) } else { z };
        }
        Ok((h, MlpCache { inputs }))
    }

    fn backward(&self, cache: &MlpCache, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            g = self.layers[i].backward(x, &g, &mut grads.layers[i])?;
            if i > 0 {
                // x is the ReLU output of the previous layer; zero where it was clipped
                for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
        }
        Ok(g)
    }
}
