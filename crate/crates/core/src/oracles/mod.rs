//! Independent ground truth: closed-form Gaussian scores and posteriors,
//! exact dynamic programming, and central finite differences.
//!
//! Nothing here calls into the representation or agent code; the only shared
//! piece is the environment description each oracle reads its parameters from.

use crate::envs::{LinearGaussianMdp, TabularMdp};
use crate::error::{Error, Result};

fn corrupted_variance(sigma0: f64, beta: f64) -> f64 {
    (1.0 - beta) * sigma0 * sigma0 + beta
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Contract(format!("noise level must lie in (0,1), got {beta}")));
    }
    Ok(())
}

/// Score `∇ log p(s̃′ | s, a; β)` of the corrupted linear-Gaussian dynamics,
/// whose marginal is `N(√(1−β)·m, ((1−β)σ₀² + β) I)` with `m = A s + B a`.
pub fn analytic_score_gaussian(env: &LinearGaussianMdp, s: &[f64], a: &[f64], noisy: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let m = env.mean(s, a)?;
    if noisy.len() != m.len() {
        return Err(Error::dim("analytic_score_gaussian s̃′", m.len(), noisy.len()));
    }
    let var = corrupted_variance(env.sigma0(), beta);
    let c = (1.0 - beta).sqrt();
    Ok(noisy.iter().zip(&m).map(|(x, mi)| -(x - c * mi) / var).collect())
}

/// Posterior mean `E[s′ | s̃′, s, a; β]` for the linear-Gaussian dynamics.
pub fn posterior_mean_gaussian(env: &LinearGaussianMdp, s: &[f64], a: &[f64], noisy: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let m = env.mean(s, a)?;
    if noisy.len() != m.len() {
        return Err(Error::dim("posterior_mean_gaussian s̃′", m.len(), noisy.len()));
    }
    let s2 = env.sigma0() * env.sigma0();
    let var = corrupted_variance(env.sigma0(), beta);
    let c = (1.0 - beta).sqrt();
    Ok(noisy.iter().zip(&m).map(|(x, mi)| (s2 * c * x + beta * mi) / var).collect())
}

/// Posterior variance of each coordinate of `s′` given `s̃′`.
pub fn posterior_variance_gaussian(sigma0: f64, beta: f64) -> f64 {
    sigma0 * sigma0 * beta / corrupted_variance(sigma0, beta)
}

/// Minimum of the per-level denoising loss for the linear-Gaussian dynamics:
/// `(1 − β)·d·Var[s′ | s̃′]`.
pub fn gaussian_denoising_floor(sigma0: f64, beta: f64, d: usize) -> f64 {
    (1.0 - beta) * d as f64 * posterior_variance_gaussian(sigma0, beta)
}

/// Tabular action values, `q[s][a]`.
pub type QTable = Vec<Vec<f64>>;

/// Bellman optimality iteration to a sup-norm fixed point within `tol`.
pub fn value_iteration(mdp: &TabularMdp, gamma: f64, tol: f64) -> Result<QTable> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Contract(format!("gamma must lie in [0,1), got {gamma}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Contract("tolerance must be positive".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![vec![0.0; na]; ns];
    // Stop when the update is small enough that the fixed point is within tol.
    let stop = if gamma == 0.0 { f64::INFINITY } else { tol * (1.0 - gamma) / gamma };
    loop {
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut delta: f64 = 0.0;
        let mut next = vec![vec![0.0; na]; ns];
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = (0..ns).map(|t| mdp.prob(s, a, t) * v[t]).sum();
                next[s][a] = mdp.reward(s, a) + gamma * ev;
                delta = delta.max((next[s][a] - q[s][a]).abs());
            }
        }
        q = next;
        if delta <= stop {
            return Ok(q);
        }
    }
}

/// Greedy deterministic policy of a Q table as a stochastic-policy table.
pub fn greedy_policy(q: &QTable) -> Vec<Vec<f64>> {
    q.iter()
        .map(|row| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
                .0;
            let mut p = vec![0.0; row.len()];
            p[best] = 1.0;
            p
        })
        .collect()
}

/// Exact `Q^π` by solving `(I − γ P^π) V = r^π` and then
/// `Q(s,a) = r(s,a) + γ Σ P(s′|s,a) V(s′)`.
pub fn policy_eval_exact(mdp: &TabularMdp, policy: &[Vec<f64>], gamma: f64) -> Result<QTable> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Contract(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.len() != ns {
        return Err(Error::dim("policy rows", ns, policy.len()));
    }
    for (s, row) in policy.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != na || row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("policy row {s} is not a distribution")));
        }
    }
    let mut a = vec![vec![0.0; ns]; ns];
    let mut b = vec![0.0; ns];
    for s in 0..ns {
        a[s][s] += 1.0;
        for act in 0..na {
            let w = policy[s][act];
            b[s] += w * mdp.reward(s, act);
            for t in 0..ns {
                a[s][t] -= gamma * w * mdp.prob(s, act, t);
            }
        }
    }
    let v = solve_dense(a, b)?;
    Ok((0..ns)
        .map(|s| {
            (0..na)
                .map(|act| mdp.reward(s, act) + gamma * (0..ns).map(|t| mdp.prob(s, act, t) * v[t]).sum::<f64>())
                .collect()
        })
        .collect())
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() < 1e-14 {
            return Err(Error::Numeric("singular policy-evaluation system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

/// Largest relative discrepancy between `analytic` and central differences of
/// `f` with step `eps`. Coordinates where both gradients are below `1e−8` are
/// skipped, so an identically zero gradient checks out as 0.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::dim("finite_diff_check", params.len(), analytic.len()));
    }
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x)?;
        x[i] = orig - eps;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Poison(format!("objective at coordinate {i}")));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let scale = numeric.abs().max(analytic[i].abs());
        if scale > 1e-8 {
            worst = worst.max((numeric - analytic[i]).abs() / scale);
        }
    }
    Ok(worst)
}
