//! Linear action-value fitting on tabular problems, used to check the TD
//! machinery against exact dynamic programming.

use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::numerics::{cholesky, cholesky_solve, dot, Matrix, Rng};
use crate::oracles::QTable;

/// Least-squares `ξ` minimising `Σ (φ_iᵀξ − y_i)²`.
pub fn fit_linear_q(features: &Matrix, targets: &[f64]) -> Result<Vec<f64>> {
    if features.rows() != targets.len() || features.rows() == 0 {
        return Err(Error::dim("least-squares targets", features.rows(), targets.len()));
    }
    let gram = features.t_matmul(features)?;
    let rhs = features.t_mul_vec(targets)?;
    let l = cholesky(&gram).map_err(|_| Error::Numeric("features are not linearly independent".into()))?;
    cholesky_solve(&l, &rhs)
}

/// One-hot index of `(s, a)`.
pub fn one_hot_sa(mdp: &TabularMdp, s: usize, a: usize) -> Vec<f64> {
    let mut v = vec![0.0; mdp.n_states() * mdp.n_actions()];
    v[s * mdp.n_actions() + a] = 1.0;
    v
}

/// Linear TD(0) evaluation of a fixed stochastic policy with one-hot
/// `(s, a)` features. Each update samples `(s, a)` uniformly, draws `s′`
/// from the dynamics and bootstraps on `Σ_a′ π(a′|s′) Q(s′, a′)`.
pub fn td_policy_evaluation(mdp: &TabularMdp, policy: &[Vec<f64>], gamma: f64, updates: usize, lr: f64, rng: &mut Rng) -> Result<QTable> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.len() != ns || policy.iter().any(|row| row.len() != na) {
        return Err(Error::dim("policy table", format!("{ns}×{na}"), format!("{} rows", policy.len())));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::config(None, "gamma must lie in [0,1)"));
    }
    let mut xi = vec![0.0; ns * na];
    for _ in 0..updates {
        let s = rng.index(ns);
        let a = rng.index(na);
        let s_next = mdp.sample_next(s, a, rng);
        let phi = one_hot_sa(mdp, s, a);
        let boot: f64 = (0..na).map(|b| policy[s_next][b] * dot(&one_hot_sa(mdp, s_next, b), &xi)).sum();
        let delta = mdp.reward(s, a) + gamma * boot - dot(&phi, &xi);
        for (w, f) in xi.iter_mut().zip(&phi) {
            *w += lr * delta * f;
        }
    }
    Ok((0..ns).map(|s| xi[s * na..(s + 1) * na].to_vec()).collect())
}
