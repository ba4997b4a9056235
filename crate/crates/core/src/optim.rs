//! AdamW over flat parameter buffers.

use serde::{Deserialize, Serialize};

use crate::nets::{Gradients, NetParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Decoupled-weight-decay Adam. Updates are all-or-nothing: a step that
/// would produce a non-finite parameter leaves both the parameters and the
/// moments untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &NetParams) -> Self {
        AdamW {
            cfg,
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            steps: 0,
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut NetParams, grads: &Gradients) -> Result<()> {
        Error::check_dim(params.len(), grads.data().len())?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let c = self.cfg;
        let t = (self.steps + 1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let mut m = self.m.clone();
        let mut v = self.v.clone();
        let mut next = params.data().to_vec();
        for i in 0..next.len() {
            let g = grads.data()[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps) + c.weight_decay * next[i];
            next[i] -= c.lr * update;
        }
        if next.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameter update".into()));
        }
        params.load_values(next)?;
        self.m = m;
        self.v = v;
        self.steps += 1;
        Ok(())
    }
}
