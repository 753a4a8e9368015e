//! Finite-difference verification of analytic gradients.
//!
//! The layer output `y` is scalarized as `s = Σ r ⊙ y` with seeded standard
//! normal weights `r`, so `∂s/∂y = r` exercises every output entry. Each
//! input and parameter entry is then perturbed by ±h and compared with the
//! analytic gradient from `Layer::backward`.
//!
//! Relative error for one tensor is `max|a − n| / max(max|a|, max|n|, 1e-3)`
//! where `a` is analytic and `n` numerical; the floor keeps tensors whose
//! true gradient is identically zero (e.g. attention key biases) from
//! dividing round-off by round-off.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::layers::Layer;
use crate::diffcore::params::zeros_like;
use crate::diffcore::{dot, Parameterized, Tensor};
use crate::error::Result;

/// Central-difference step at 64-bit precision.
pub const STEP: f64 = 1e-5;

const DENOM_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct TensorError {
    pub name: String,
    pub rel_error: f64,
}

/// Per-tensor relative errors, input first.
pub fn grad_check_detailed<L: Layer>(layer: &L, input: &Tensor, seed: u64) -> Result<Vec<TensorError>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, cache) = layer.forward(input)?;
    let weights = Tensor::normal(y.rows(), y.cols(), 1.0, &mut rng);
    let scalar = |l: &L, x: &Tensor| -> Result<f64> { Ok(dot(l.apply(x)?.data(), weights.data())) };

    let mut grads = zeros_like(layer);
    let dx = layer.backward(&cache, &weights, &mut grads)?;

    let mut report = Vec::new();

    let mut x = input.clone();
    let mut numeric = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + STEP;
        let plus = scalar(layer, &x)?;
        x.data_mut()[i] = orig - STEP;
        let minus = scalar(layer, &x)?;
        x.data_mut()[i] = orig;
        numeric.data_mut()[i] = (plus - minus) / (2.0 * STEP);
    }
    report.push(TensorError {
        name: "input".into(),
        rel_error: relative_error(&dx, &numeric),
    });

    let analytic: Vec<(String, Tensor)> = grads.params().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let mut probe = layer.clone();
    for (idx, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = Tensor::zeros(a.rows(), a.cols());
        for i in 0..a.len() {
            let orig = probe.params()[idx].1.data()[i];
            set_entry(&mut probe, idx, i, orig + STEP);
            let plus = scalar(&probe, input)?;
            set_entry(&mut probe, idx, i, orig - STEP);
            let minus = scalar(&probe, input)?;
            set_entry(&mut probe, idx, i, orig);
            numeric.data_mut()[i] = (plus - minus) / (2.0 * STEP);
        }
        report.push(TensorError {
            name: name.clone(),
            rel_error: relative_error(a, &numeric),
        });
    }
    Ok(report)
}

/// Maximum relative error over the input gradient and all parameter gradients.
pub fn grad_check<L: Layer>(layer: &L, input: &Tensor, seed: u64) -> Result<f64> {
    Ok(grad_check_detailed(layer, input, seed)?
        .into_iter()
        .map(|e| e.rel_error)
        .fold(0.0, f64::max))
}

fn set_entry<P: Parameterized>(p: &mut P, tensor: usize, entry: usize, value: f64) {
    let mut params = p.params_mut();
    params[tensor].1.data_mut()[entry] = value;
}

pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic.max_abs().max(numeric.max_abs()).max(DENOM_FLOOR);
    diff / scale
}
