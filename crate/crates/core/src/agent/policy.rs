use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix, Mlp, MlpGrads, Rng, Tape};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian policy squashed by `tanh` into a box of actions.
///
/// The network maps an observation feature to `[mean, log_std]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub net: Mlp,
    low: Vec<f64>,
    high: Vec<f64>,
}

/// Reparameterised draws with everything needed for the backward pass.
#[derive(Clone, Debug)]
pub struct PolicySample {
    pub actions: Matrix,
    pub log_prob: Vec<f64>,
    eps: Matrix,
    u: Matrix,
    log_std: Matrix,
    inside: Vec<bool>,
    tape: Tape,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(1 − tanh²u)` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

impl Policy {
    /// ReLU hidden layers, linear output of width `2 × action_dim`.
    pub fn new(obs_dim: usize, hidden: &[usize], low: Vec<f64>, high: Vec<f64>, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * low.len());
        let net = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng)?;
        Self::from_net(net, low, high)
    }

    pub fn from_net(net: Mlp, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() || low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(Error::Contract(format!("invalid action box {low:?} .. {high:?}")));
        }
        if net.out_dim() != 2 * low.len() {
            return Err(Error::dim("policy output (2 × action dim)", 2 * low.len(), net.out_dim()));
        }
        Ok(Self { net, low, high })
    }

    pub fn action_dim(&self) -> usize {
        self.low.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.net.in_dim()
    }

    fn centre_scale(&self, j: usize) -> (f64, f64) {
        (0.5 * (self.high[j] + self.low[j]), 0.5 * (self.high[j] - self.low[j]))
    }

    /// Draws with supplied standard-normal noise, one row per observation.
    pub fn sample_with_noise(&self, obs: &Matrix, eps: &Matrix) -> Result<PolicySample> {
        let k = self.action_dim();
        if eps.shape() != (obs.rows(), k) {
            return Err(Error::dim("policy noise", format!("({}, {k})", obs.rows()), format!("{:?}", eps.shape())));
        }
        let (out, tape) = self.net.forward(obs)?;
        let n = obs.rows();
        let mut actions = Matrix::zeros(n, k);
        let mut u = Matrix::zeros(n, k);
        let mut log_std = Matrix::zeros(n, k);
        let mut inside = vec![true; n * k];
        let mut log_prob = vec![0.0; n];
        for i in 0..n {
            for j in 0..k {
                let raw = out.get(i, k + j);
                inside[i * k + j] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let e = eps.get(i, j);
                let uij = out.get(i, j) + ls.exp() * e;
                let (c, s) = self.centre_scale(j);
                actions.set(i, j, c + s * uij.tanh());
                u.set(i, j, uij);
                log_std.set(i, j, ls);
                log_prob[i] += -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq(uij) - s.ln();
            }
        }
        Ok(PolicySample {
            actions,
            log_prob,
            eps: eps.clone(),
            u,
            log_std,
            inside,
            tape,
        })
    }

    pub fn sample(&self, obs: &Matrix, rng: &mut Rng) -> Result<PolicySample> {
        let eps = Matrix::from_fn(obs.rows(), self.action_dim(), |_, _| rng.normal());
        self.sample_with_noise(obs, &eps)
    }

    /// One stochastic action.
    pub fn act(&self, obs: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(self.sample(&Matrix::row_vector(obs), rng)?.actions.into_vec())
    }

    /// Squashed mean action.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.predict_one(obs)?;
        Ok((0..self.action_dim())
            .map(|j| {
                let (c, s) = self.centre_scale(j);
                c + s * out[j].tanh()
            })
            .collect())
    }

    /// Parameter gradients given `∂L/∂action` per row and `∂L/∂log π` per row.
    pub fn backward(&self, sample: &PolicySample, g_action: &Matrix, g_logp: &[f64]) -> Result<MlpGrads> {
        let (n, k) = sample.actions.shape();
        if g_action.shape() != (n, k) || g_logp.len() != n {
            return Err(Error::Contract("policy backward inputs do not match the sample".into()));
        }
        let mut g_out = Matrix::zeros(n, 2 * k);
        for i in 0..n {
            for j in 0..k {
                let t = sample.u.get(i, j).tanh();
                let (_, s) = self.centre_scale(j);
                let g_u = g_action.get(i, j) * s * (1.0 - t * t) + g_logp[i] * 2.0 * t;
                g_out.set(i, j, g_u);
                if sample.inside[i * k + j] {
                    let sigma_eps = sample.log_std.get(i, j).exp() * sample.eps.get(i, j);
                    g_out.set(i, k + j, g_u * sigma_eps - g_logp[i]);
                }
            }
        }
        Ok(self.net.backward(&sample.tape, &g_out)?.0)
    }

    /// Clamped log standard deviations of the given sample.
    pub fn sample_log_std(sample: &PolicySample) -> &Matrix {
        &sample.log_std
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, Params};
    use crate::oracles::finite_diff_check;

    #[test]
    fn actions_stay_in_bounds() {
        let mut rng = seeded_rng(1);
        let policy = Policy::new(3, &[16], vec![-2.0], vec![2.0], &mut rng).unwrap();
        let obs = Matrix::from_fn(1000, 3, |_, _| 5.0 * rng.normal());
        for _ in 0..100 {
            let s = policy.sample(&obs, &mut rng).unwrap();
            assert!(s.actions.data().iter().all(|a| (-2.0..=2.0).contains(a)));
            assert!(s.log_prob.iter().all(|l| l.is_finite()));
        }
    }

    #[test]
    fn log_prob_matches_change_of_variables() {
        // With a bias-only network the density of a = 2 tanh(u), u ~ N(μ, σ²) is explicit.
        let net = Mlp::from_layers(vec![crate::numerics::Layer {
            weight: Matrix::zeros(2, 1),
            bias: vec![0.3, -0.5],
            activation: Activation::Identity,
        }])
        .unwrap();
        let policy = Policy::from_net(net, vec![-2.0], vec![2.0]).unwrap();
        let s = policy.sample_with_noise(&Matrix::row_vector(&[0.0]), &Matrix::row_vector(&[0.8])).unwrap();
        let sigma = (-0.5f64).exp();
        let u = 0.3 + sigma * 0.8;
        let a = 2.0 * u.tanh();
        let y: f64 = a / 2.0;
        let expected = -0.5 * 0.8f64.powi(2) - sigma.ln() - HALF_LN_2PI - (2.0 * (1.0 - y * y)).ln();
        assert!((s.log_prob[0] - expected).abs() < 1e-12);
        assert!((s.actions.get(0, 0) - a).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(2);
        let policy = Policy::new(3, &[8, 8], vec![-1.0, 0.0], vec![1.0, 3.0], &mut rng).unwrap();
        let obs = Matrix::from_fn(5, 3, |_, _| rng.normal());
        let eps = Matrix::from_fn(5, 2, |_, _| rng.normal());
        let ga = Matrix::from_fn(5, 2, |_, _| rng.normal());
        let gl = rng.normal_vec(5);
        let objective = |p: &Policy| -> Result<f64> {
            let s = p.sample_with_noise(&obs, &eps)?;
            let fa: f64 = s.actions.data().iter().zip(ga.data()).map(|(a, b)| a * b).sum();
            let fl: f64 = s.log_prob.iter().zip(&gl).map(|(a, b)| a * b).sum();
            Ok(fa + fl)
        };
        let sample = policy.sample_with_noise(&obs, &eps).unwrap();
        let grads = policy.backward(&sample, &ga, &gl).unwrap();
        let err = finite_diff_check(
            |flat| {
                let mut p = policy.clone();
                p.net.assign_flat(flat)?;
                objective(&p)
            },
            &policy.net.flatten(),
            &grads.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn stable_log_jacobian() {
        for u in [-40.0, -3.0, 0.0, 0.5, 3.0, 40.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            let stable = log_one_minus_tanh_sq(u);
            if direct.is_finite() {
                assert!((direct - stable).abs() < 1e-9, "{u}");
            }
            assert!(stable.is_finite());
        }
    }
}
