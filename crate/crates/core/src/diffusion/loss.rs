use crate::error::{Error, Result};
use crate::numerics::{Matrix, MlpGrads, Rng};

use super::head::{HeadGrads, ReprHead};
use super::schedule::NoiseSchedule;
use super::score::{ScorePair, ScorePairGrads};

/// Transitions stripped of rewards: concatenated `(s, a)` rows and next states.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsBatch {
    pub sa: Matrix,
    pub next: Matrix,
}

impl DynamicsBatch {
    pub fn new(sa: Matrix, next: Matrix) -> Result<Self> {
        if sa.rows() != next.rows() {
            return Err(Error::dim("dynamics batch rows", sa.rows(), next.rows()));
        }
        Ok(Self { sa, next })
    }

    pub fn len(&self) -> usize {
        self.sa.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.sa.rows() == 0
    }
}

#[derive(Clone, Debug)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: ScorePairGrads,
}

/// Mean of `‖s̃′ + β·ψᵀζ(s̃′,β) − √(1−β)·target‖²` and its exact gradients.
///
/// With `target = s′` this is the score-matching loss; with the posterior
/// mean `E[s′ | s̃′]` as target it is the regression form with the same minimiser.
pub fn denoising_loss(sp: &ScorePair, sa: &Matrix, noisy: &Matrix, betas: &[f64], targets: &Matrix) -> Result<LossAndGrads> {
    let n = sa.rows();
    if n == 0 {
        return Err(Error::Contract("denoising loss needs a non-empty batch".into()));
    }
    if targets.shape() != noisy.shape() {
        return Err(Error::dim("denoising targets", format!("{:?}", noisy.shape()), format!("{:?}", targets.shape())));
    }
    let fwd = sp.forward(sa, noisy, betas)?;
    let d = sp.state_dim();
    let mut grad = Matrix::zeros(n, d);
    let mut total = 0.0;
    for b in 0..n {
        let beta = betas[b];
        let c = (1.0 - beta).sqrt();
        let (x, t, s) = (noisy.row(b), targets.row(b), fwd.score.row(b));
        let g = grad.row_mut(b);
        for j in 0..d {
            let r = x[j] + beta * s[j] - c * t[j];
            total += r * r;
            g[j] = 2.0 * beta * r / n as f64;
        }
    }
    let grads = sp.backward(&fwd, &grad, None)?;
    Ok(LossAndGrads {
        loss: total / n as f64,
        grads,
    })
}

/// Score-matching loss with the corruption supplied explicitly.
pub fn diff_loss_with_noise(sp: &ScorePair, batch: &DynamicsBatch, betas: &[f64], eps: &Matrix) -> Result<LossAndGrads> {
    if eps.shape() != batch.next.shape() || betas.len() != batch.len() {
        return Err(Error::Contract("noise draws do not match the batch".into()));
    }
    let noisy = corrupt_batch(&batch.next, betas, eps);
    denoising_loss(sp, &batch.sa, &noisy, betas, &batch.next)
}

/// Score-matching loss with one uniformly drawn level and one fresh
/// corruption per sample.
pub fn diff_loss(sp: &ScorePair, batch: &DynamicsBatch, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<LossAndGrads> {
    if batch.is_empty() {
        return Err(Error::Contract("diff_loss needs a non-empty batch".into()));
    }
    let (betas, eps) = draw_noise(batch.len(), batch.next.cols(), schedule, rng);
    diff_loss_with_noise(sp, batch, &betas, &eps)
}

/// Per-sample levels and standard-normal draws, in sample order.
pub fn draw_noise(n: usize, d: usize, schedule: &NoiseSchedule, rng: &mut Rng) -> (Vec<f64>, Matrix) {
    let mut betas = Vec::with_capacity(n);
    let mut eps = Matrix::zeros(n, d);
    for b in 0..n {
        betas.push(schedule.sample(rng));
        for e in eps.row_mut(b) {
            *e = rng.normal();
        }
    }
    (betas, eps)
}

/// Row-wise `√(1−β)·s′ + √β·ε`.
pub fn corrupt_batch(next: &Matrix, betas: &[f64], eps: &Matrix) -> Matrix {
    Matrix::from_fn(next.rows(), next.cols(), |i, j| {
        (1.0 - betas[i]).sqrt() * next.get(i, j) + betas[i].sqrt() * eps.get(i, j)
    })
}

/// Floor applied to `‖φ‖²` inside the logarithm.
pub const NORM_LOG_FLOOR: f64 = 1e-12;

/// Per-sample term `(‖ψ‖² − log max(‖φ‖², floor))²`.
pub fn norm_term(psi_sq: f64, phi_sq: f64) -> f64 {
    let r = psi_sq - phi_sq.max(NORM_LOG_FLOOR).ln();
    r * r
}

#[derive(Clone, Debug)]
pub struct NormLoss {
    pub loss: f64,
    pub psi: MlpGrads,
    pub head: HeadGrads,
}

/// Mean of `(‖ψ(s,a)‖² − log‖φ(s,a)‖²)²` with gradients for `ψ` and the head.
pub fn norm_loss(sp: &ScorePair, head: &ReprHead, sa: &Matrix) -> Result<NormLoss> {
    let n = sa.rows();
    if n == 0 {
        return Err(Error::Contract("norm_loss needs a non-empty batch".into()));
    }
    let (psi, psi_tape) = sp.psi.forward(sa)?;
    let (phi, head_tape) = head.forward(&psi)?;
    let mut g_psi = Matrix::zeros(n, psi.cols());
    let mut g_phi = Matrix::zeros(n, phi.cols());
    let mut total = 0.0;
    for b in 0..n {
        let p = psi.row(b);
        let f = phi.row(b);
        let pp: f64 = p.iter().map(|x| x * x).sum();
        let ff: f64 = f.iter().map(|x| x * x).sum();
        let floored = ff < NORM_LOG_FLOOR;
        let r = pp - ff.max(NORM_LOG_FLOOR).ln();
        total += norm_term(pp, ff);
        let scale = 2.0 * r / n as f64;
        for (g, x) in g_psi.row_mut(b).iter_mut().zip(p) {
            *g = scale * 2.0 * x;
        }
        if !floored {
            for (g, x) in g_phi.row_mut(b).iter_mut().zip(f) {
                *g = -scale * 2.0 * x / ff;
            }
        }
    }
    let (head_grads, g_psi_head) = head.backward(&head_tape, &g_phi)?;
    g_psi.add_assign(&g_psi_head)?;
    let (psi_grads, _) = sp.psi.backward(&psi_tape, &g_psi)?;
    Ok(NormLoss {
        loss: total / n as f64,
        psi: psi_grads,
        head: head_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, Activation, Layer, Mlp, Params};
    use crate::oracles::finite_diff_check;

    fn constant_psi(values: &[f64], in_dim: usize) -> Mlp {
        Mlp::from_layers(vec![Layer {
            weight: Matrix::zeros(values.len(), in_dim),
            bias: values.to_vec(),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn zero_score_loss_is_noise_energy() {
        let mut rng = seeded_rng(7);
        let (d, n, beta) = (4, 100_000, 0.5);
        let psi = constant_psi(&[0.0, 0.0], 2);
        let zeta = Mlp::new(&[d + 2, 2 * d], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let sp = ScorePair::from_nets(psi, zeta, d).unwrap();
        let batch = DynamicsBatch::new(
            Matrix::from_fn(n, 2, |_, _| rng.normal()),
            Matrix::from_fn(n, d, |_, _| rng.normal()),
        )
        .unwrap();
        let schedule = NoiseSchedule::from_levels(vec![beta]).unwrap();
        let out = diff_loss(&sp, &batch, &schedule, &mut rng).unwrap();
        // Per-sample loss is β·χ²_d: mean β·d, standard error β·√(2d/n).
        let se = beta * (2.0 * d as f64 / n as f64).sqrt();
        assert!((out.loss - 2.0).abs() < 4.0 * se, "loss {}", out.loss);
    }

    #[test]
    fn empty_batch_rejected() {
        let mut rng = seeded_rng(8);
        let sp = ScorePair::new(2, 1, 2, &[3], &[3], &mut rng).unwrap();
        let batch = DynamicsBatch::new(Matrix::zeros(0, 2), Matrix::zeros(0, 1)).unwrap();
        let schedule = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        assert!(diff_loss(&sp, &batch, &schedule, &mut rng).is_err());
        assert!(norm_loss(&sp, &ReprHead::new(2, 3, 4, &mut rng).unwrap(), &Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn diff_loss_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(9);
        let sp = ScorePair::new(3, 2, 3, &[4], &[5], &mut rng).unwrap();
        let n = 6;
        let batch = DynamicsBatch::new(
            Matrix::from_fn(n, 3, |_, _| rng.normal()),
            Matrix::from_fn(n, 2, |_, _| rng.normal()),
        )
        .unwrap();
        // Large levels so the score term dominates the residual.
        let betas: Vec<f64> = (0..n).map(|i| 0.2 + 0.1 * i as f64).collect();
        let eps = Matrix::from_fn(n, 2, |_, _| rng.normal());
        let out = diff_loss_with_noise(&sp, &batch, &betas, &eps).unwrap();
        let err = finite_diff_check(
            |flat| {
                let mut p = sp.clone();
                p.assign_flat(flat)?;
                Ok(diff_loss_with_noise(&p, &batch, &betas, &eps)?.loss)
            },
            &sp.flatten(),
            &out.grads.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn norm_term_values() {
        assert_eq!(norm_term(0.0, 1.0), 0.0);
        assert_eq!(norm_term(1.0, 1.0), 1.0);
        assert_eq!(norm_term(0.0, 0.0), NORM_LOG_FLOOR.ln().powi(2));
    }

    #[test]
    fn norm_loss_through_head() {
        let mut rng = seeded_rng(10);
        let zeta = Mlp::new(&[3, 1], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        // W₁ = π/2, W₂ = 1 and ψ = 1 give φ = elu(sin(π/2)) = 1.
        let head = ReprHead::from_weights(Matrix::row_vector(&[std::f64::consts::FRAC_PI_2]), Matrix::row_vector(&[1.0])).unwrap();
        let sp = ScorePair::from_nets(constant_psi(&[1.0], 1), zeta.clone(), 1).unwrap();
        let out = norm_loss(&sp, &head, &Matrix::row_vector(&[0.0])).unwrap();
        assert!((out.loss - 1.0).abs() < 1e-12);

        // ψ = 0 collapses φ to 0; the floor keeps the loss finite.
        let sp0 = ScorePair::from_nets(constant_psi(&[0.0], 1), zeta, 1).unwrap();
        let collapsed = norm_loss(&sp0, &head, &Matrix::row_vector(&[0.0])).unwrap();
        assert!(collapsed.loss.is_finite());
        assert_eq!(collapsed.loss, norm_term(0.0, 0.0));
    }

    #[test]
    fn norm_loss_gradients() {
        let mut rng = seeded_rng(11);
        let sp = ScorePair::new(3, 2, 3, &[4], &[4], &mut rng).unwrap();
        let head = ReprHead::new(3, 5, 4, &mut rng).unwrap();
        let sa = Matrix::from_fn(5, 3, |_, _| rng.normal());
        let out = norm_loss(&sp, &head, &sa).unwrap();
        let err = finite_diff_check(
            |flat| {
                let mut p = sp.clone();
                p.psi.assign_flat(flat)?;
                Ok(norm_loss(&p, &head, &sa)?.loss)
            },
            &sp.psi.flatten(),
            &out.psi.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "psi relative error {err}");
        let err = finite_diff_check(
            |flat| {
                let mut h = head.clone();
                h.assign_flat(flat)?;
                Ok(norm_loss(&sp, &h, &sa)?.loss)
            },
            &head.flatten(),
            &out.head.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "head relative error {err}");
    }
}
