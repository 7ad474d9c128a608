use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    names: Vec<String>,
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
}

impl Adam {
    /// Creates zeroed moments shaped like `params`. `label` prefixes tensor
    /// names in poison errors.
    pub fn new<P: Params + ?Sized>(config: AdamConfig, params: &P, label: &str) -> Self {
        let specs = params.tensor_specs();
        let names = specs.iter().map(|(n, _)| format!("{label}.{n}")).collect();
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            config,
            step: 0,
            names,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Either every tensor is updated or, on a shape
    /// mismatch or non-finite gradient, none is.
    pub fn step<P: Params + ?Sized, G: Params + ?Sized>(&mut self, params: &mut P, grads: &G) -> Result<()> {
        let g = grads.tensors();
        if g.len() != self.m.len() {
            return Err(Error::dim("Adam::step tensor count", self.m.len(), g.len()));
        }
        for (i, t) in g.iter().enumerate() {
            if t.len() != self.m[i].len() {
                return Err(Error::dim(format!("Adam::step {}", self.names[i]), self.m[i].len(), t.len()));
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Poison(format!("gradient of {}", self.names[i])));
            }
        }
        let mut p = params.tensors_mut();
        if p.len() != g.len() {
            return Err(Error::dim("Adam::step params", g.len(), p.len()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, grad) in g.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (&gj, x)) in grad.iter().zip(p[i].iter_mut()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment buffers in a checkpoint-friendly form.
    pub(crate) fn export(&self) -> (u64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (self.step, self.m.clone(), self.v.clone())
    }

    pub(crate) fn import(&mut self, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Checkpoint("Adam moment tensor count mismatch".into()));
        }
        for (i, (a, b)) in m.iter().zip(&v).enumerate() {
            if a.len() != self.m[i].len() || b.len() != self.v[i].len() {
                return Err(Error::Checkpoint(format!("Adam moment shape mismatch for {}", self.names[i])));
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
