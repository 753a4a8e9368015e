use serde::{Deserialize, Serialize};

use crate::diffcore::{Parameterized, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LarsConfig {
    pub lr: f64,
    pub trust_coefficient: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub eps: f64,
    /// When false the trust ratio is fixed at 1.
    pub trust_ratio: bool,
}

impl Default for LarsConfig {
    fn default() -> Self {
        LarsConfig {
            lr: 0.01,
            trust_coefficient: 0.001,
            momentum: 0.9,
            weight_decay: 0.0,
            eps: 1e-9,
            trust_ratio: true,
        }
    }
}

impl LarsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("LARS lr must be positive, got {}", self.lr)));
        }
        if !(self.trust_coefficient > 0.0) {
            return Err(Error::Config(format!(
                "LARS trust coefficient must be positive, got {}",
                self.trust_coefficient
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("LARS momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.eps >= 0.0) {
            return Err(Error::Config("LARS weight decay and eps must be non-negative".into()));
        }
        Ok(())
    }
}

/// Layer-wise adaptive rate scaling with heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Lars {
    pub cfg: LarsConfig,
    velocity: Vec<(String, Tensor)>,
}

impl Lars {
    pub fn new(cfg: LarsConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Lars { cfg, velocity: Vec::new() })
    }

    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let ps = params.params_mut();
        let gs = grads.params();
        check_structure(&ps, &gs)?;
        if self.velocity.is_empty() {
            self.velocity = gs.iter().map(|(n, g)| (n.clone(), Tensor::zeros(g.rows(), g.cols()))).collect();
        }
        for ((name, w), ((_, g), (vname, v))) in ps.into_iter().zip(gs.into_iter().zip(self.velocity.iter_mut())) {
            if &name != vname {
                return Err(Error::Contract(format!("optimizer state for {vname} applied to {name}")));
            }
            lars_tensor(w, g, v, &self.cfg);
        }
        Ok(())
    }
}

fn check_structure(ps: &[(String, &mut Tensor)], gs: &[(String, &Tensor)]) -> Result<()> {
    if ps.len() != gs.len() {
        return Err(Error::Contract(format!("{} parameters but {} gradients", ps.len(), gs.len())));
    }
    for ((pn, p), (gn, g)) in ps.iter().zip(gs) {
        if pn != gn || p.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "optimizer step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    Ok(())
}

/// One LARS update of a single tensor.
pub fn lars_tensor(w: &mut Tensor, g: &Tensor, v: &mut Tensor, cfg: &LarsConfig) {
    let gd: Vec<f64> = w
        .data()
        .iter()
        .zip(g.data())
        .map(|(wi, gi)| gi + cfg.weight_decay * wi)
        .collect();
    let w_norm = w.frobenius_norm();
    let g_norm = gd.iter().map(|x| x * x).sum::<f64>().sqrt();
    let lambda = if cfg.trust_ratio && w_norm > 0.0 && g_norm > 0.0 {
        cfg.trust_coefficient * w_norm / (g_norm + cfg.eps)
    } else {
        1.0
    };
    let step = cfg.lr * lambda;
    for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(gd) {
        *vi = cfg.momentum * *vi + step * gi;
        *wi -= *vi;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        let ok = cfg.lr > 0.0
            && (0.0..1.0).contains(&cfg.beta1)
            && (0.0..1.0).contains(&cfg.beta2)
            && cfg.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam configuration {cfg:?}")));
        }
        Ok(Adam { cfg, t: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let ps = params.params_mut();
        let gs = grads.params();
        check_structure(&ps, &gs)?;
        if self.m.is_empty() {
            self.m = gs.iter().map(|(_, g)| Tensor::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (((_, w), (_, g)), (m, v)) in ps.into_iter().zip(gs).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((wi, &gi), mi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                *wi -= c.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
