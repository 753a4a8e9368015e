//! Temperature-scaled contrastive (NT-Xent) loss.
//!
//! Rows `k` and `k + N` of the `2N × D` embedding matrix are a positive
//! pair; every other row is a negative. For anchor `i` with positive `p`:
//!
//! ```text
//! ℓ_i = −log( exp(s_ip/τ) / Σ_{k≠i} exp(s_ik/τ) )
//! ```
//!
//! where `s` is the dot product. The denominator keeps the positive and
//! drops only the anchor itself. The batch loss is the mean over all `2N`
//! anchors.

use serde::{Deserialize, Serialize};

use crate::diffcore::{l2_norm, Tensor};
use crate::encoders::UNIT_NORM_TOL;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { temperature: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to each embedding row.
    pub grad: Tensor,
}

/// Index of the positive partner of row `i` in a batch of `2n` rows.
#[inline]
pub fn positive_of(i: usize, n: usize) -> usize {
    if i < n {
        i + n
    } else {
        i - n
    }
}

/// Loss and embedding gradients for a `2N × D` batch of unit-norm rows.
pub fn nt_xent_loss(embeddings: &Tensor, cfg: &LossConfig) -> Result<LossOutput> {
    cfg.validate()?;
    let rows = embeddings.rows();
    if rows < 4 || rows % 2 != 0 {
        return Err(Error::Contract(format!("batch needs an even number ≥ 4 of samples, got {rows}")));
    }
    for (r, row) in embeddings.row_iter().enumerate() {
        let n = l2_norm(row);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!("embedding {r} has norm {n}, expected 1")));
        }
    }
    nt_xent_unchecked(embeddings, cfg.temperature)
}

/// Same as [`nt_xent_loss`] without the unit-norm precondition check.
pub(crate) fn nt_xent_unchecked(embeddings: &Tensor, temperature: f64) -> Result<LossOutput> {
    let two_n = embeddings.rows();
    let n = two_n / 2;
    let inv_t = 1.0 / temperature;
    let sims = embeddings.matmul_t(embeddings)?;
    let mut coeff = Tensor::zeros(two_n, two_n);
    let mut total = 0.0;
    for i in 0..two_n {
        let p = positive_of(i, n);
        let logits: Vec<f64> = sims.row(i).iter().map(|s| s * inv_t).collect();
        let max = logits
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .map(|(_, &l)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (k, &l) in logits.iter().enumerate() {
            if k != i {
                z += (l - max).exp();
            }
        }
        total += max + z.ln() - logits[p];
        let row = coeff.row_mut(i);
        for (k, &l) in logits.iter().enumerate() {
            if k != i {
                row[k] = (l - max).exp() / z;
            }
        }
        row[p] -= 1.0;
    }
    let scale = 1.0 / two_n as f64;
    // dL/ds_ik = coeff_ik / (2N); s depends on both rows, hence the symmetrization.
    let mut sym = coeff.add(&coeff.transpose())?;
    sym.scale(scale * inv_t);
    let grad = sym.matmul(embeddings)?;
    Ok(LossOutput {
        loss: total * scale,
        grad,
    })
}
