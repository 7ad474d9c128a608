//! Environments: a native pendulum, a linear-Gaussian system with closed-form
//! transition densities, small tabular MDPs, and the observation pipeline
//! (velocity masking and history stacking) for the partially observable
//! variants.

mod linear_gaussian;
mod observation;
mod pendulum;
mod tabular;

pub use linear_gaussian::LinearGaussianMdp;
pub use observation::{stack_history, HistoryWindow, ObservationPipeline, VelocityMask};
pub use pendulum::Pendulum;
pub use tabular::TabularMdp;

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    /// Dimension of the full (unmasked) observation.
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
    pub gamma: f64,
    /// Observation coordinates that carry velocities.
    pub velocity_indices: Vec<usize>,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.obs_dim == 0 || self.action_dim == 0 || self.horizon == 0 {
            return Err(Error::Contract(format!("{}: dimensions must be positive", self.name)));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::dim("EnvSpec action bounds", self.action_dim, self.action_low.len()));
        }
        if self
            .action_low
            .iter()
            .zip(&self.action_high)
            .any(|(l, h)| !l.is_finite() || !h.is_finite() || l >= h)
        {
            return Err(Error::Contract(format!("{}: action bounds must be finite with low < high", self.name)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Contract(format!("{}: gamma must lie in [0,1)", self.name)));
        }
        Ok(())
    }

    /// Clamps an action into bounds; non-finite components are rejected.
    pub fn clamp_action(&self, action: &[f64]) -> Result<Vec<f64>> {
        if action.len() != self.action_dim {
            return Err(Error::dim(format!("{} action", self.name), self.action_dim, action.len()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Contract(format!("{}: non-finite action {action:?}", self.name)));
        }
        Ok(action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (l, h))| a.clamp(*l, *h))
            .collect())
    }
}

/// Result of one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Common environment interface. Environments are immutable; the evolving
/// state is passed in and out explicitly.
pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    fn reset(&self, rng: &mut Rng) -> Vec<f64>;
    fn step(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> Result<Step>;
    /// Full observation of a state.
    fn observe(&self, state: &[f64]) -> Vec<f64>;
}

/// Any environment selectable by name.
#[derive(Clone, Debug)]
pub enum Env {
    Pendulum(Pendulum),
    LinearGaussian(LinearGaussianMdp),
    Tabular(TabularMdp),
}

impl Env {
    /// Resolves `pendulum`, `lingauss`, `chain` or `grid`, each optionally
    /// suffixed with `-masked`. Returns the environment and whether velocity
    /// masking was requested.
    pub fn from_name(name: &str) -> Result<(Env, bool)> {
        let (base, masked) = match name.strip_suffix("-masked") {
            Some(b) => (b, true),
            None => (name, false),
        };
        let env = match base {
            "pendulum" => Env::Pendulum(Pendulum::default()),
            "lingauss" => Env::LinearGaussian(LinearGaussianMdp::default_task(4, 2, 0.7)?),
            "chain" => Env::Tabular(TabularMdp::chain(5, 0.99)?),
            "grid" => Env::Tabular(TabularMdp::grid(4, 4, 0.1, 0.99)?),
            other => return Err(Error::config(None, format!("unknown environment {other:?}"))),
        };
        if masked && env.spec().velocity_indices.is_empty() {
            return Err(Error::config(None, format!("environment {base:?} has no velocity coordinates to mask")));
        }
        Ok((env, masked))
    }
}

impl Environment for Env {
    fn spec(&self) -> &EnvSpec {
        match self {
            Env::Pendulum(e) => e.spec(),
            Env::LinearGaussian(e) => e.spec(),
            Env::Tabular(e) => e.spec(),
        }
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Env::Pendulum(e) => e.reset(rng),
            Env::LinearGaussian(e) => e.reset(rng),
            Env::Tabular(e) => e.reset(rng),
        }
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> Result<Step> {
        match self {
            Env::Pendulum(e) => e.step(state, action, rng),
            Env::LinearGaussian(e) => e.step(state, action, rng),
            Env::Tabular(e) => e.step(state, action, rng),
        }
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        match self {
            Env::Pendulum(e) => e.observe(state),
            Env::LinearGaussian(e) => e.observe(state),
            Env::Tabular(e) => e.observe(state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    #[test]
    fn names_resolve() {
        for n in ["pendulum", "lingauss", "chain", "grid", "pendulum-masked"] {
            let (env, masked) = Env::from_name(n).unwrap();
            env.spec().validate().unwrap();
            assert_eq!(masked, n.ends_with("-masked"));
        }
        assert!(Env::from_name("halfcheetah").is_err());
        assert!(Env::from_name("chain-masked").is_err());
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        for n in ["pendulum", "lingauss", "grid"] {
            let (env, _) = Env::from_name(n).unwrap();
            assert_eq!(env.reset(&mut seeded_rng(5)), env.reset(&mut seeded_rng(5)));
        }
    }

    #[test]
    fn bounded_rollouts_never_blow_up() {
        let mut rng = seeded_rng(11);
        for n in ["pendulum", "lingauss", "chain", "grid"] {
            let (env, _) = Env::from_name(n).unwrap();
            let spec = env.spec().clone();
            let mut s = env.reset(&mut rng);
            for _ in 0..5000 {
                let a: Vec<f64> = (0..spec.action_dim)
                    .map(|i| rng.uniform_range(spec.action_low[i] * 1.5, spec.action_high[i] * 1.5))
                    .collect();
                let st = env.step(&s, &a, &mut rng).unwrap();
                assert!(st.reward.is_finite());
                assert!(st.state.iter().all(|x| x.is_finite() && x.abs() < 1e3), "{n}: {:?}", st.state);
                s = st.state;
            }
        }
    }

    #[test]
    fn non_finite_action_is_rejected() {
        let (env, _) = Env::from_name("pendulum").unwrap();
        let s = env.reset(&mut seeded_rng(0));
        assert!(matches!(env.step(&s, &[f64::NAN], &mut seeded_rng(0)), Err(Error::Contract(_))));
    }
}
