use std::f64::consts::PI;

use super::{EnvSpec, Environment, Step};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Torque-limited inverted pendulum; `θ = 0` is upright.
///
/// State is `(θ, θ̇)`, the observation `(cos θ, sin θ, θ̇)`. The per-step cost
/// `θ² + 0.1·θ̇² + 0.001·u²` (θ wrapped to `[−π, π)`) is turned into the reward
/// `1 − cost / 5`, so the best possible step earns 1 and a good swing-up
/// episode of 200 steps lands around 170.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    pub max_speed: f64,
    pub max_torque: f64,
    pub dt: f64,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
}

pub const PENDULUM_COST_SCALE: f64 = 5.0;

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            spec: EnvSpec {
                name: "pendulum".into(),
                state_dim: 2,
                obs_dim: 3,
                action_dim: 1,
                action_low: vec![-2.0],
                action_high: vec![2.0],
                horizon: 200,
                gamma: 0.99,
                velocity_indices: vec![2],
            },
            max_speed: 8.0,
            max_torque: 2.0,
            dt: 0.05,
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
        }
    }
}

fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn reward(&self, theta: f64, theta_dot: f64, torque: f64) -> f64 {
        let th = wrap_angle(theta);
        let cost = th * th + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque;
        1.0 - cost / PENDULUM_COST_SCALE
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![rng.uniform_range(-PI, PI), rng.uniform_range(-1.0, 1.0)]
    }

    fn step(&self, state: &[f64], action: &[f64], _rng: &mut Rng) -> Result<Step> {
        if state.len() != 2 {
            return Err(Error::dim("pendulum state", 2, state.len()));
        }
        let u = self.spec.clamp_action(action)?[0];
        let (th, thdot) = (state[0], state[1]);
        let reward = self.reward(th, thdot, u);
        let (g, m, l, dt) = (self.gravity, self.mass, self.length, self.dt);
        let new_thdot = (thdot + (3.0 * g / (2.0 * l) * th.sin() + 3.0 / (m * l * l) * u) * dt)
            .clamp(-self.max_speed, self.max_speed);
        let new_th = wrap_angle(th + new_thdot * dt);
        Ok(Step {
            state: vec![new_th, new_thdot],
            reward,
            done: false,
        })
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        vec![state[0].cos(), state[0].sin(), state[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    #[test]
    fn upright_at_rest_earns_the_maximum() {
        let p = Pendulum::default();
        let st = p.step(&[0.0, 0.0], &[0.0], &mut seeded_rng(0)).unwrap();
        assert_eq!(st.reward, 1.0);
        let mut rng = seeded_rng(1);
        for _ in 0..1000 {
            let (th, thd, u) = (rng.uniform_range(-4.0, 4.0), rng.uniform_range(-8.0, 8.0), rng.uniform_range(-2.0, 2.0));
            assert!(p.reward(th, thd, u) <= 1.0);
        }
    }

    #[test]
    fn reset_bounds() {
        let p = Pendulum::default();
        let mut rng = seeded_rng(2);
        for _ in 0..1000 {
            let s = p.reset(&mut rng);
            assert!((-PI..=PI).contains(&s[0]) && (-1.0..=1.0).contains(&s[1]));
        }
    }

    #[test]
    fn torque_is_clamped() {
        let p = Pendulum::default();
        let a = p.step(&[0.3, 0.1], &[2.0], &mut seeded_rng(0)).unwrap();
        let b = p.step(&[0.3, 0.1], &[50.0], &mut seeded_rng(0)).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn observation_layout() {
        let o = Pendulum::default().observe(&[PI / 2.0, -0.5]);
        assert!(o[0].abs() < 1e-15 && (o[1] - 1.0).abs() < 1e-15 && o[2] == -0.5);
    }
}
