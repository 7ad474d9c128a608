use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Ordered corruption levels `β¹ < … < β^T`, each in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
}

impl NoiseSchedule {
    /// `levels` values spaced linearly from `beta_min` to `beta_max` inclusive.
    pub fn linear(levels: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if levels < 2 {
            return Err(Error::config(None, format!("noise schedule needs at least 2 levels, got {levels}")));
        }
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0) {
            return Err(Error::config(
                None,
                format!("noise bounds must satisfy 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}"),
            ));
        }
        let step = (beta_max - beta_min) / (levels - 1) as f64;
        let mut betas: Vec<f64> = (0..levels).map(|k| beta_min + step * k as f64).collect();
        betas[levels - 1] = beta_max;
        Ok(Self { betas })
    }

    /// Explicit levels; must be strictly increasing inside `(0, 1)`.
    pub fn from_levels(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) || betas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(None, "noise levels must be strictly increasing inside (0,1)"));
        }
        Ok(Self { betas })
    }

    pub fn levels(&self) -> &[f64] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// One level drawn uniformly.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        self.betas[rng.index(self.betas.len())]
    }
}

/// `√(1−β)·s′ + √β·ε` for a given noise vector.
pub fn corrupt_with_noise(next: &[f64], beta: f64, eps: &[f64]) -> Vec<f64> {
    let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
    next.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// Corrupts `next` with fresh standard-normal noise at level `beta`.
pub fn corrupt(next: &[f64], beta: f64, rng: &mut Rng) -> Vec<f64> {
    let eps = rng.normal_vec(next.len());
    corrupt_with_noise(next, beta, &eps)
}
