use std::f64::consts::PI;

use super::{EnvSpec, Environment, Step};
use crate::error::{Error, Result};
use crate::numerics::{dot, symmetric_eigenvalues, Matrix, Rng};

/// `s′ = A s + B a + σ₀ ε` with `ε ~ N(0, I)`; reward `−(q‖s‖² + r‖a‖²)`.
///
/// Its transition density is Gaussian in closed form, which makes every
/// score that the diffusion objective estimates available analytically.
#[derive(Clone, Debug)]
pub struct LinearGaussianMdp {
    spec: EnvSpec,
    a: Matrix,
    b: Matrix,
    sigma0: f64,
    pub state_cost: f64,
    pub action_cost: f64,
}

/// Upper bound on the spectral radius: `min_k ‖A^k‖₂^{1/k}` over `k = 1, 2, 4, …, 64`.
fn spectral_radius_bound(a: &Matrix) -> Result<f64> {
    let mut power = a.clone();
    let mut best = f64::INFINITY;
    let mut k = 1;
    while k <= 64 {
        let gram = power.t_matmul(&power)?;
        let top = symmetric_eigenvalues(&gram)?.last().copied().unwrap_or(0.0).max(0.0);
        best = best.min(top.sqrt().powf(1.0 / k as f64));
        power = power.matmul(&power)?;
        k *= 2;
    }
    Ok(best)
}

impl LinearGaussianMdp {
    pub fn new(a: Matrix, b: Matrix, sigma0: f64, state_cost: f64, action_cost: f64) -> Result<Self> {
        let d = a.rows();
        if a.cols() != d || d == 0 {
            return Err(Error::dim("LinearGaussianMdp A (square)", d, a.cols()));
        }
        if b.rows() != d || b.cols() == 0 {
            return Err(Error::dim("LinearGaussianMdp B rows", d, b.rows()));
        }
        if !(sigma0 >= 0.0) || !sigma0.is_finite() {
            return Err(Error::Contract(format!("σ₀ must be finite and non-negative, got {sigma0}")));
        }
        let rho = spectral_radius_bound(&a)?;
        if rho > 1.0 + 1e-9 {
            return Err(Error::Contract(format!("spectral radius of A must be ≤ 1, bound is {rho}")));
        }
        let m = b.cols();
        Ok(Self {
            spec: EnvSpec {
                name: "lingauss".into(),
                state_dim: d,
                obs_dim: d,
                action_dim: m,
                action_low: vec![-1.0; m],
                action_high: vec![1.0; m],
                horizon: 100,
                gamma: 0.99,
                velocity_indices: vec![],
            },
            a,
            b,
            sigma0,
            state_cost,
            action_cost,
        })
    }

    /// A damped rotation in each coordinate pair (factor 0.9, angle 0.3) driven
    /// by actions that hit coordinates round-robin.
    pub fn default_task(d: usize, m: usize, sigma0: f64) -> Result<Self> {
        let (c, s) = (0.9 * 0.3f64.cos(), 0.9 * 0.3f64.sin());
        let mut a = Matrix::zeros(d, d);
        let mut i = 0;
        while i < d {
            if i + 1 < d {
                a.set(i, i, c);
                a.set(i, i + 1, -s);
                a.set(i + 1, i, s);
                a.set(i + 1, i + 1, c);
                i += 2;
            } else {
                a.set(i, i, 0.9);
                i += 1;
            }
        }
        let b = Matrix::from_fn(d, m, |r, k| if r % m == k { 1.0 } else { 0.0 });
        Self::new(a, b, sigma0, 1.0, 0.1)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// Transition mean `A s + B a`.
    pub fn mean(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let mut m = self.a.mul_vec(s)?;
        for (mi, bi) in m.iter_mut().zip(self.b.mul_vec(a)?) {
            *mi += bi;
        }
        Ok(m)
    }

    /// `log N(s′; A s + B a, σ₀² I)`.
    pub fn transition_logdensity(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> Result<f64> {
        if self.sigma0 == 0.0 {
            return Err(Error::Numeric("transition density is undefined for σ₀ = 0".into()));
        }
        let mean = self.mean(s, a)?;
        if s_next.len() != mean.len() {
            return Err(Error::dim("transition_logdensity s′", mean.len(), s_next.len()));
        }
        let diff: Vec<f64> = s_next.iter().zip(&mean).map(|(x, m)| x - m).collect();
        let var = self.sigma0 * self.sigma0;
        let d = mean.len() as f64;
        Ok(-0.5 * dot(&diff, &diff) / var - 0.5 * d * (2.0 * PI * var).ln())
    }
}

impl Environment for LinearGaussianMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        rng.normal_vec(self.spec.state_dim)
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> Result<Step> {
        let a = self.spec.clamp_action(action)?;
        let reward = -(self.state_cost * dot(state, state) + self.action_cost * dot(&a, &a));
        let mut next = self.mean(state, &a)?;
        for x in next.iter_mut() {
            *x += self.sigma0 * rng.normal();
        }
        Ok(Step {
            state: next,
            reward,
            done: false,
        })
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn identity_env(sigma0: f64) -> LinearGaussianMdp {
        LinearGaussianMdp::new(Matrix::identity(2), Matrix::identity(2), sigma0, 1.0, 0.1).unwrap()
    }

    #[test]
    fn noiseless_step_is_the_linear_map() {
        let st = identity_env(0.0).step(&[1.0, 0.0], &[0.0, 1.0], &mut seeded_rng(0)).unwrap();
        assert_eq!(st.state, vec![1.0, 1.0]);
    }

    #[test]
    fn log_density_at_and_off_the_mean() {
        let env = identity_env(1.0);
        let at = env.transition_logdensity(&[0.5, 0.2], &[0.1, -0.3], &[0.6, -0.1]).unwrap();
        assert!((at + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((at + 1.83788).abs() < 1e-5);
        let off = env.transition_logdensity(&[0.5, 0.2], &[0.1, -0.3], &[1.6, -0.1]).unwrap();
        assert!((at - off - 0.5).abs() < 1e-12);
        assert!(identity_env(0.0).transition_logdensity(&[0.0; 2], &[0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn density_integrates_to_one_in_one_dimension() {
        let sigma0 = 0.7;
        let env = LinearGaussianMdp::new(Matrix::identity(1), Matrix::identity(1), sigma0, 1.0, 0.0).unwrap();
        let mean = 0.3 + 0.2;
        let (lo, hi, n) = (mean - 8.0 * sigma0, mean + 8.0 * sigma0, 4001);
        let h = (hi - lo) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * env.transition_logdensity(&[0.3], &[0.2], &[x]).unwrap().exp();
        }
        assert!((total * h - 1.0).abs() < 1e-3);
    }

    #[test]
    fn unstable_dynamics_are_rejected() {
        let a = Matrix::from_rows(&[[1.01, 0.0], [0.0, 0.5]]).unwrap();
        assert!(LinearGaussianMdp::new(a, Matrix::identity(2), 0.1, 1.0, 0.0).is_err());
        // Non-normal but stable: large norm, spectral radius 0.5.
        let a = Matrix::from_rows(&[[0.5, 3.0], [0.0, 0.5]]).unwrap();
        assert!(LinearGaussianMdp::new(a, Matrix::identity(2), 0.1, 1.0, 0.0).is_ok());
        assert!(LinearGaussianMdp::default_task(4, 2, 0.7).is_ok());
    }
}
