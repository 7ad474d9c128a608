//! Partial observability: dropping velocity coordinates and stacking a short
//! history of observations and actions into one feature vector.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Which coordinates of a full observation are velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityMask {
    full_dim: usize,
    indices: Vec<usize>,
}

impl VelocityMask {
    pub fn new(full_dim: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.len() > full_dim || indices.iter().any(|&i| i >= full_dim) {
            return Err(Error::Contract(format!(
                "velocity mask {indices:?} does not fit an observation of length {full_dim}"
            )));
        }
        if indices.len() == full_dim {
            return Err(Error::Contract("masking every coordinate leaves an empty observation".into()));
        }
        Ok(Self { full_dim, indices })
    }

    pub fn masked_dim(&self) -> usize {
        self.full_dim - self.indices.len()
    }

    /// Drops the velocity coordinates. An input that already has the masked
    /// length is returned unchanged.
    pub fn apply(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() == self.full_dim {
            Ok(obs
                .iter()
                .enumerate()
                .filter(|(i, _)| self.indices.binary_search(i).is_err())
                .map(|(_, x)| *x)
                .collect())
        } else if obs.len() == self.masked_dim() {
            Ok(obs.to_vec())
        } else {
            Err(Error::dim("mask_velocity observation", self.full_dim, obs.len()))
        }
    }
}

/// The last `L` observations interleaved with the `L − 1` actions between
/// them, `(o_{h−L+1}, a_{h−L+1}, …, a_{h−1}, o_h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryWindow {
    len: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: VecDeque<Vec<f64>>,
    acts: VecDeque<Vec<f64>>,
}

impl HistoryWindow {
    pub fn new(len: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if len == 0 || obs_dim == 0 {
            return Err(Error::Contract("history length and observation size must be positive".into()));
        }
        Ok(Self {
            len,
            obs_dim,
            act_dim,
            obs: VecDeque::with_capacity(len),
            acts: VecDeque::with_capacity(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        (self.len - 1) * (self.obs_dim + self.act_dim) + self.obs_dim
    }

    /// Starts an episode: the window is padded with copies of `o0` and zero actions.
    pub fn start(&mut self, o0: &[f64]) -> Result<Vec<f64>> {
        if o0.len() != self.obs_dim {
            return Err(Error::dim("HistoryWindow::start", self.obs_dim, o0.len()));
        }
        self.obs.clear();
        self.acts.clear();
        for _ in 0..self.len {
            self.obs.push_back(o0.to_vec());
        }
        for _ in 1..self.len {
            self.acts.push_back(vec![0.0; self.act_dim]);
        }
        Ok(self.features())
    }

    /// Appends the action that led to `obs` and `obs` itself, evicting the oldest pair.
    pub fn push(&mut self, obs: &[f64], prev_action: &[f64]) -> Result<()> {
        if self.obs.is_empty() {
            return Err(Error::Contract("history window used before start()".into()));
        }
        if obs.len() != self.obs_dim || prev_action.len() != self.act_dim {
            return Err(Error::dim(
                "HistoryWindow::push",
                format!("({}, {})", self.obs_dim, self.act_dim),
                format!("({}, {})", obs.len(), prev_action.len()),
            ));
        }
        self.obs.pop_front();
        self.obs.push_back(obs.to_vec());
        if self.len > 1 {
            self.acts.pop_front();
            self.acts.push_back(prev_action.to_vec());
        }
        Ok(())
    }

    /// Flattened `x_h`.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feature_dim());
        for i in 0..self.obs.len() {
            out.extend_from_slice(&self.obs[i]);
            if i + 1 < self.obs.len() {
                out.extend_from_slice(&self.acts[i]);
            }
        }
        out
    }

    /// Rebuilds the window from a flattened feature vector.
    pub fn restore(&mut self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim() {
            return Err(Error::dim("HistoryWindow::restore", self.feature_dim(), features.len()));
        }
        self.obs.clear();
        self.acts.clear();
        let stride = self.obs_dim + self.act_dim;
        for i in 0..self.len {
            let o = &features[i * stride..i * stride + self.obs_dim];
            self.obs.push_back(o.to_vec());
            if i + 1 < self.len {
                self.acts.push_back(features[i * stride + self.obs_dim..(i + 1) * stride].to_vec());
            }
        }
        Ok(())
    }
}

/// Pushes one step into the window and returns the new flattened history.
pub fn stack_history(window: &mut HistoryWindow, new_obs: &[f64], prev_action: &[f64]) -> Result<Vec<f64>> {
    window.push(new_obs, prev_action)?;
    Ok(window.features())
}

/// Maps raw environment observations to the agent's input features.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationPipeline {
    mask: Option<VelocityMask>,
    window: HistoryWindow,
}

impl ObservationPipeline {
    pub fn new(full_obs_dim: usize, act_dim: usize, mask: Option<VelocityMask>, history_len: usize) -> Result<Self> {
        let obs_dim = mask.as_ref().map_or(full_obs_dim, VelocityMask::masked_dim);
        Ok(Self {
            mask,
            window: HistoryWindow::new(history_len, obs_dim, act_dim)?,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.window.feature_dim()
    }

    fn filter(&self, obs: &[f64]) -> Result<Vec<f64>> {
        match &self.mask {
            Some(m) => m.apply(obs),
            None => Ok(obs.to_vec()),
        }
    }

    pub fn reset(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        let o = self.filter(obs)?;
        self.window.start(&o)
    }

    pub fn step(&mut self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let o = self.filter(obs)?;
        stack_history(&mut self.window, &o, action)
    }

    pub fn restore(&mut self, features: &[f64]) -> Result<()> {
        self.window.restore(features)
    }
}
