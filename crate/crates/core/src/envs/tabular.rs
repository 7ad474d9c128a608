use super::{EnvSpec, Environment, Step};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Finite MDP with an explicit transition tensor.
///
/// As an [`Environment`] the state is the index stored as a single float, the
/// observation is its one-hot encoding, and the one-dimensional action in
/// `[−1, 1]` is binned uniformly into the discrete actions.
#[derive(Clone, Debug)]
pub struct TabularMdp {
    spec: EnvSpec,
    n_states: usize,
    n_actions: usize,
    /// `p[(s·A + a)·S + s′]`.
    p: Vec<f64>,
    /// `r[s·A + a]`.
    r: Vec<f64>,
    initial: Vec<f64>,
}

impl TabularMdp {
    /// `p[s][a][s′]`, `r[s][a]`; every row must sum to 1 within 1e−12.
    pub fn new(p: Vec<Vec<Vec<f64>>>, r: Vec<Vec<f64>>, gamma: f64, initial: Vec<f64>) -> Result<Self> {
        let n_states = p.len();
        if n_states == 0 {
            return Err(Error::Contract("tabular MDP needs at least one state".into()));
        }
        let n_actions = p[0].len();
        if n_actions == 0 {
            return Err(Error::Contract("tabular MDP needs at least one action".into()));
        }
        if r.len() != n_states || initial.len() != n_states {
            return Err(Error::dim("tabular MDP reward/initial rows", n_states, r.len().min(initial.len())));
        }
        let mut flat_p = Vec::with_capacity(n_states * n_actions * n_states);
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            if p[s].len() != n_actions || r[s].len() != n_actions {
                return Err(Error::dim(format!("tabular MDP actions at state {s}"), n_actions, p[s].len()));
            }
            for a in 0..n_actions {
                let row = &p[s][a];
                if row.len() != n_states {
                    return Err(Error::dim(format!("P[{s}][{a}]"), n_states, row.len()));
                }
                let sum: f64 = row.iter().sum();
                if row.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::Contract(format!("P[{s}][{a}] is not a distribution (sum {sum})")));
                }
                if !r[s][a].is_finite() {
                    return Err(Error::Poison(format!("reward r[{s}][{a}]")));
                }
                flat_p.extend_from_slice(row);
                flat_r.push(r[s][a]);
            }
        }
        let isum: f64 = initial.iter().sum();
        if initial.iter().any(|x| !(*x >= 0.0)) || (isum - 1.0).abs() > 1e-12 {
            return Err(Error::Contract("initial distribution must sum to 1".into()));
        }
        let spec = EnvSpec {
            name: "tabular".into(),
            state_dim: 1,
            obs_dim: n_states,
            action_dim: 1,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            horizon: 100,
            gamma,
            velocity_indices: vec![],
        };
        spec.validate()?;
        Ok(Self {
            spec,
            n_states,
            n_actions,
            p: flat_p,
            r: flat_r,
            initial,
        })
    }

    /// Deterministic chain: action 0 steps left, action 1 steps right (both
    /// saturating). Reward 1 only for stepping right in the last state, which
    /// is a self-loop. Starts in state 0.
    pub fn chain(n: usize, gamma: f64) -> Result<Self> {
        let mut p = vec![vec![vec![0.0; n]; 2]; n];
        let mut r = vec![vec![0.0; 2]; n];
        for s in 0..n {
            p[s][0][s.saturating_sub(1)] = 1.0;
            p[s][1][(s + 1).min(n - 1)] = 1.0;
        }
        r[n - 1][1] = 1.0;
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        let mut mdp = Self::new(p, r, gamma, initial)?;
        mdp.spec.name = "chain".into();
        Ok(mdp)
    }

    /// `width × height` grid with actions up/down/left/right; with probability
    /// `slip` the move goes in a uniformly chosen other direction. Reward 1 for
    /// any action taken in the far corner, which is absorbing. Starts at 0.
    pub fn grid(width: usize, height: usize, slip: f64, gamma: f64) -> Result<Self> {
        let n = width * height;
        let goal = n - 1;
        let moves: [(isize, isize); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];
        let target = |s: usize, k: usize| -> usize {
            let (x, y) = ((s % width) as isize, (s / width) as isize);
            let (nx, ny) = (x + moves[k].0, y + moves[k].1);
            if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                s
            } else {
                ny as usize * width + nx as usize
            }
        };
        let mut p = vec![vec![vec![0.0; n]; 4]; n];
        let mut r = vec![vec![0.0; 4]; n];
        for s in 0..n {
            for a in 0..4 {
                if s == goal {
                    p[s][a][s] = 1.0;
                    r[s][a] = 1.0;
                    continue;
                }
                for k in 0..4 {
                    let w = if k == a { 1.0 - slip } else { slip / 3.0 };
                    p[s][a][target(s, k)] += w;
                }
                // Re-normalise away rounding so rows sum to 1 within 1e-12.
                let sum: f64 = p[s][a].iter().sum();
                p[s][a].iter_mut().for_each(|x| *x /= sum);
            }
        }
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        let mut mdp = Self::new(p, r, gamma, initial)?;
        mdp.spec.name = "grid".into();
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.p[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.p[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Bins a continuous action in `[−1, 1]` into a discrete index.
    pub fn action_index(&self, action: f64) -> usize {
        let u = ((action + 1.0) * 0.5).clamp(0.0, 1.0);
        ((u * self.n_actions as f64) as usize).min(self.n_actions - 1)
    }

    /// Centre of the bin for a discrete action.
    pub fn action_value(&self, index: usize) -> f64 {
        -1.0 + (2.0 * index as f64 + 1.0) / self.n_actions as f64
    }

    pub fn one_hot_state(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[s] = 1.0;
        v
    }

    /// Draws `s′ ~ P(·|s, a)`.
    pub fn sample_next(&self, s: usize, a: usize, rng: &mut Rng) -> usize {
        sample_categorical(self.row(s, a), rng)
    }
}

fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` above the cumulative sum: take the last state with mass.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

impl Environment for TabularMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![sample_categorical(&self.initial, rng) as f64]
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> Result<Step> {
        let a = self.action_index(self.spec.clamp_action(action)?[0]);
        let s = state
            .first()
            .map(|x| *x as usize)
            .filter(|s| *s < self.n_states)
            .ok_or_else(|| Error::Contract(format!("invalid tabular state {state:?}")))?;
        let reward = self.reward(s, a);
        let next = self.sample_next(s, a, rng);
        Ok(Step {
            state: vec![next as f64],
            reward,
            done: false,
        })
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        self.one_hot_state(state[0] as usize)
    }
}
