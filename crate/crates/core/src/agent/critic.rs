use crate::diffusion::{HeadGrads, ReprHead, ScorePair};
use crate::error::{Error, Result};
use crate::numerics::{dot, soft_update, Adam, AdamConfig, Matrix, Params, Rng};

/// One linear critic `Q(s,a) = φ_θ(s,a)ᵀ ξ` with its own head `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub head: ReprHead,
    pub xi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticGrads {
    pub head: HeadGrads,
    pub xi: Vec<f64>,
}

impl Critic {
    /// Fresh head with `ξ = 0`.
    pub fn new(m: usize, fourier: usize, d_phi: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            head: ReprHead::new(m, fourier, d_phi, rng)?,
            xi: vec![0.0; d_phi],
        })
    }

    /// `Q` for each row of `ψ` outputs.
    pub fn q_from_psi(&self, psi: &Matrix) -> Result<Vec<f64>> {
        let phi = self.head.predict(psi)?;
        phi.mul_vec(&self.xi)
    }

    /// `Q` values and gradients of `Σ g_i Q_i` with respect to the critic and `ψ`.
    pub fn backward_from_psi(&self, psi: &Matrix, g: &[f64]) -> Result<(Vec<f64>, CriticGrads, Matrix)> {
        let (phi, tape) = self.head.forward(psi)?;
        let q = phi.mul_vec(&self.xi)?;
        let xi = phi.t_mul_vec(g)?;
        let g_phi = Matrix::from_fn(phi.rows(), phi.cols(), |i, j| g[i] * self.xi[j]);
        let (head, g_psi) = self.head.backward(&tape, &g_phi)?;
        Ok((q, CriticGrads { head, xi }, g_psi))
    }
}

/// Separate optimisers for a critic's head `θ` and its weights `ξ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticOptim {
    pub head: Adam,
    pub xi: Adam,
}

impl CriticOptim {
    pub fn new(critic: &Critic, head_lr: f64, xi_lr: f64, label: &str) -> Self {
        Self {
            head: Adam::new(AdamConfig::with_lr(head_lr), &critic.head, &format!("{label}.head")),
            xi: Adam::new(AdamConfig::with_lr(xi_lr), &critic.xi, &format!("{label}.xi")),
        }
    }

    /// Applies both steps, or neither if either gradient is poisoned.
    pub fn step(&mut self, critic: &mut Critic, grads: &CriticGrads) -> Result<()> {
        if let Some(bad) = grads.head.tensors().iter().chain(std::iter::once(&grads.xi.as_slice())).position(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::Poison(format!("critic gradient tensor {bad}")));
        }
        self.head.step(&mut critic.head, &grads.head)?;
        self.xi.step(&mut critic.xi, &grads.xi)
    }
}

/// Two online critics and their target copies.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinCritic {
    pub online: [Critic; 2],
    pub target: [Critic; 2],
}

/// Which critic a Q query goes through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Online1,
    Online2,
    Target1,
    Target2,
}

impl TwinCritic {
    /// Independent heads; targets start as exact copies.
    pub fn new(m: usize, fourier: usize, d_phi: usize, rng: &mut Rng) -> Result<Self> {
        let online = [Critic::new(m, fourier, d_phi, rng)?, Critic::new(m, fourier, d_phi, rng)?];
        Ok(Self {
            target: online.clone(),
            online,
        })
    }

    pub fn get(&self, which: Which) -> &Critic {
        match which {
            Which::Online1 => &self.online[0],
            Which::Online2 => &self.online[1],
            Which::Target1 => &self.target[0],
            Which::Target2 => &self.target[1],
        }
    }

    /// Polyak step of both targets toward their online critics.
    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            soft_update(t, o, tau)?;
        }
        Ok(())
    }

    /// `min(Q̄₁, Q̄₂)` on rows of `ψ`.
    pub fn target_min(&self, psi: &Matrix) -> Result<Vec<f64>> {
        let q1 = self.target[0].q_from_psi(psi)?;
        let q2 = self.target[1].q_from_psi(psi)?;
        Ok(q1.into_iter().zip(q2).map(|(a, b)| a.min(b)).collect())
    }
}

/// `φ_θ(s,a)ᵀξ` for the selected critic.
pub fn q_value(twin: &TwinCritic, sp: &ScorePair, s: &[f64], a: &[f64], which: Which) -> Result<f64> {
    let psi = sp.psi.predict_one(&[s, a].concat())?;
    let critic = twin.get(which);
    let phi = critic.head.predict(&Matrix::row_vector(&psi))?;
    Ok(dot(phi.row(0), &critic.xi))
}

/// Mean squared TD error of one critic against fixed targets, with gradients.
pub fn critic_loss_and_grads(critic: &Critic, psi: &Matrix, targets: &[f64]) -> Result<(f64, CriticGrads)> {
    let n = psi.rows();
    if n == 0 || targets.len() != n {
        return Err(Error::Contract(format!("critic loss needs matching non-empty inputs, got {n} rows and {} targets", targets.len())));
    }
    let (phi, tape) = critic.head.forward(psi)?;
    let q = phi.mul_vec(&critic.xi)?;
    let g: Vec<f64> = q.iter().zip(targets).map(|(q, y)| 2.0 * (q - y) / n as f64).collect();
    let loss = q.iter().zip(targets).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() / n as f64;
    let xi = phi.t_mul_vec(&g)?;
    let g_phi = Matrix::from_fn(phi.rows(), phi.cols(), |i, j| g[i] * critic.xi[j]);
    let (head, _) = critic.head.backward(&tape, &g_phi)?;
    Ok((loss, CriticGrads { head, xi }))
}

impl Params for Critic {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.head.tensors();
        t.push(&self.xi);
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { head, xi } = self;
        let mut t = head.tensors_mut();
        t.push(xi.as_mut_slice());
        t
    }

    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut t = self.head.tensor_specs();
        t.push(("xi".into(), vec![self.xi.len()]));
        t
    }
}

impl Params for CriticGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.head.tensors();
        t.push(&self.xi);
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { head, xi } = self;
        let mut t = head.tensors_mut();
        t.push(xi.as_mut_slice());
        t
    }

    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut t = self.head.tensor_specs();
        t.push(("xi".into(), vec![self.xi.len()]));
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use crate::oracles::finite_diff_check;

    #[test]
    fn zero_weights_give_zero_q() {
        let mut rng = seeded_rng(1);
        let sp = ScorePair::new(3, 2, 4, &[6], &[6], &mut rng).unwrap();
        let twin = TwinCritic::new(4, 5, 7, &mut rng).unwrap();
        for w in [Which::Online1, Which::Online2, Which::Target1, Which::Target2] {
            assert_eq!(q_value(&twin, &sp, &[0.1, 0.2], &[0.3], w).unwrap(), 0.0);
        }
    }

    #[test]
    fn basis_feature_selects_weight() {
        // W₁ = π/2, W₂ = e_1 column and ψ = 1 give φ = e_1 scaled by elu(1) = 1.
        let head = ReprHead::from_weights(
            Matrix::row_vector(&[std::f64::consts::FRAC_PI_2]),
            Matrix::from_rows(&[[0.0], [1.0], [0.0]]).unwrap(),
        )
        .unwrap();
        let critic = Critic { head, xi: vec![3.0, -2.0, 5.0] };
        let q = critic.q_from_psi(&Matrix::row_vector(&[1.0])).unwrap();
        assert!((q[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn td_arithmetic_on_one_transition() {
        let mut rng = seeded_rng(2);
        let mut critic = Critic::new(2, 3, 4, &mut rng).unwrap();
        critic.xi = vec![0.5, -0.1, 0.2, 0.3];
        let psi = Matrix::row_vector(&[0.4, -0.7]);
        let q = critic.q_from_psi(&psi).unwrap()[0];
        let (loss, _) = critic_loss_and_grads(&critic, &psi, &[1.0]).unwrap();
        assert!((loss - (1.0 - q).powi(2)).abs() < 1e-14);
        let zero = Critic::new(2, 3, 4, &mut rng).unwrap();
        let (loss, grads) = critic_loss_and_grads(&zero, &psi, &[0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(3);
        let mut critic = Critic::new(3, 5, 6, &mut rng).unwrap();
        critic.xi = rng.normal_vec(6);
        let psi = Matrix::from_fn(7, 3, |_, _| rng.normal());
        let targets = rng.normal_vec(7);
        let (_, grads) = critic_loss_and_grads(&critic, &psi, &targets).unwrap();
        let err = finite_diff_check(
            |flat| {
                let mut c = critic.clone();
                c.assign_flat(flat)?;
                Ok(critic_loss_and_grads(&c, &psi, &targets)?.0)
            },
            &critic.flatten(),
            &grads.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn target_min_is_below_each_target() {
        let mut rng = seeded_rng(4);
        let mut twin = TwinCritic::new(3, 4, 5, &mut rng).unwrap();
        twin.target[0].xi = rng.normal_vec(5);
        twin.target[1].xi = rng.normal_vec(5);
        let psi = Matrix::from_fn(20, 3, |_, _| rng.normal());
        let m = twin.target_min(&psi).unwrap();
        let q1 = twin.target[0].q_from_psi(&psi).unwrap();
        let q2 = twin.target[1].q_from_psi(&psi).unwrap();
        for i in 0..20 {
            assert!(m[i] <= q1[i] && m[i] <= q2[i]);
        }
    }
}
