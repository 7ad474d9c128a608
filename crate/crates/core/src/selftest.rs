//! The oracle battery: every fast correctness check, each reduced to one
//! number compared against a fixed limit.

use std::fmt;

use crate::agent::{actor_loss_and_grads, critic_loss_and_grads, td_policy_evaluation, td_targets, Batch, LinearCriticQ, Policy, TwinCritic, UpdateParams};
use crate::config::Config;
use crate::diffusion::{corrupt_batch, corrupt_with_noise, denoising_loss, diff_loss_with_noise, draw_noise, norm_loss, score_eval, train_representation, DynamicsBatch, NoiseSchedule, ReprHead, ReprTrainConfig, ScorePair};
use crate::envs::{Environment, LinearGaussianMdp, TabularMdp};
use crate::error::Result;
use crate::exploration::{elliptical_bonus, kernel_bonus, update_covariance, BonusState, EllipticalState, KernelState};
use crate::numerics::{seeded_rng, spd_inverse, Adam, AdamConfig, Matrix, Params, Rng};
use crate::oracles::{analytic_score_gaussian, finite_diff_check, greedy_policy, policy_eval_exact, posterior_mean_gaussian, value_iteration};
use crate::spectral::{gaussian_kernel, partition_linear_check, rff_features, verify_spectral_identity, EbmFactorization, RffBank};

/// Whether a measured quantity falls on the right side of its limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Below,
    Above,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub bound: Bound,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, bound: Bound::Below }
    }

    pub fn above(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, bound: Bound::Above }
    }

    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::Below => self.value < self.limit,
            Bound::Above => self.value > self.limit,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.bound {
            Bound::Below => "<",
            Bound::Above => ">",
        };
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {:.3e} (need {op} {:.3e})", self.name, self.value, self.limit)
    }
}

/// Transitions of the linear-Gaussian task under uniform random actions.
pub fn gaussian_transitions(env: &LinearGaussianMdp, n: usize, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
    let spec = env.spec().clone();
    let mut sa = Matrix::zeros(n, spec.state_dim + spec.action_dim);
    let mut next = Matrix::zeros(n, spec.state_dim);
    for i in 0..n {
        let s = env.reset(rng);
        let a: Vec<f64> = (0..spec.action_dim).map(|j| rng.uniform_range(spec.action_low[j], spec.action_high[j])).collect();
        let out = env.step(&s, &a, rng)?;
        sa.row_mut(i).copy_from_slice(&[s, a].concat());
        next.row_mut(i).copy_from_slice(&out.state);
    }
    Ok((sa, next))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Cosine similarity of the gradients of the posterior-mean denoising loss
/// and the sample-target loss, with shared draws, at a freshly initialised
/// score pair of the default size.
pub fn loss_equivalence(samples: usize, seed: u64) -> Result<f64> {
    let cfg = Config::default();
    let mut rng = seeded_rng(seed);
    let env = LinearGaussianMdp::default_task(4, 2, 0.7)?;
    let sp = ScorePair::new(6, 4, cfg.psi_dim, &cfg.psi_hidden, &cfg.zeta_hidden, &mut rng)?;
    let schedule = NoiseSchedule::linear(cfg.noise_levels, cfg.beta_min, cfg.beta_max)?;
    let (sa, next) = gaussian_transitions(&env, samples, &mut rng)?;
    let (betas, eps) = draw_noise(samples, 4, &schedule, &mut rng);
    let noisy = corrupt_batch(&next, &betas, &eps);
    let mut posterior = Matrix::zeros(samples, 4);
    for i in 0..samples {
        let (s, a) = sa.row(i).split_at(4);
        posterior.row_mut(i).copy_from_slice(&posterior_mean_gaussian(&env, s, a, noisy.row(i), betas[i])?);
    }
    let sample_target = denoising_loss(&sp, &sa, &noisy, &betas, &next)?;
    let mean_target = denoising_loss(&sp, &sa, &noisy, &betas, &posterior)?;
    Ok(cosine(&sample_target.grads.flatten(), &mean_target.grads.flatten()))
}

/// Largest `|s̃′ + β·score − √(1−β)·E[s′|s̃′]|` over random tuples.
pub fn tweedie_residual(tuples: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let env = LinearGaussianMdp::default_task(4, 2, 0.7)?;
    let mut worst = 0.0f64;
    for _ in 0..tuples {
        let s = rng.normal_vec(4);
        let a: Vec<f64> = (0..2).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let noisy: Vec<f64> = rng.normal_vec(4).iter().map(|x| 2.0 * x).collect();
        let beta = rng.uniform_range(1e-4, 0.999);
        let score = analytic_score_gaussian(&env, &s, &a, &noisy, beta)?;
        let mean = posterior_mean_gaussian(&env, &s, &a, &noisy, beta)?;
        for j in 0..4 {
            worst = worst.max((noisy[j] + beta * score[j] - (1.0 - beta).sqrt() * mean[j]).abs());
        }
    }
    Ok(worst)
}

/// Worst relative errors of the random-feature density identity and the
/// linear partition function, over both fixtures.
pub fn spectral_chain(features: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = seeded_rng(seed);
    let mut ident = 0.0f64;
    let mut part = 0.0f64;
    let fixtures = [EbmFactorization::uniform_fixture(), EbmFactorization::random_fixture(&mut rng)];
    for fact in &fixtures {
        let bank = RffBank::new(features, fact.dim(), &mut rng)?;
        let (lo, hi) = fact.domain();
        let sa_points: Vec<Vec<f64>> = (0..8).map(|_| rng.normal_vec(2)).collect();
        let samples: Vec<(Vec<f64>, f64)> = sa_points.iter().map(|sa| (sa.clone(), rng.uniform_range(lo, hi))).collect();
        ident = ident.max(verify_spectral_identity(fact, &bank, &samples, 1001)?);
        part = part.max(partition_linear_check(fact, &bank, &sa_points, 1001)?);
    }
    Ok((ident, part))
}

/// Worst `|k̂ − k|` over random pairs within distance 4, and the worst
/// deviation of `k̂(x, x)` from 1.
pub fn rff_fidelity(features: usize, pairs: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = seeded_rng(seed);
    let dim = 3;
    let bank = RffBank::new(features, dim, &mut rng)?;
    let (mut worst, mut diag) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let x = rng.normal_vec(dim);
        let dir = rng.normal_vec(dim);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = rng.uniform_range(0.0, 4.0);
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + r * d / norm).collect();
        let fx = rff_features(&bank, &x)?;
        let fy = rff_features(&bank, &y)?;
        let k_hat: f64 = fx.iter().zip(&fy).map(|(a, b)| a * b).sum();
        worst = worst.max((k_hat - gaussian_kernel(&x, &y)?).abs());
        diag = diag.max((fx.iter().map(|a| a * a).sum::<f64>() - 1.0).abs());
    }
    Ok((worst, diag))
}

/// Finite-difference relative errors of every trained loss on small nets,
/// as `(name, error)`.
pub fn gradient_checks(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = seeded_rng(seed);
    let eps_fd = 1e-5;
    let sp = ScorePair::new(3, 2, 3, &[5], &[5], &mut rng)?;
    let n = 6;
    let batch = DynamicsBatch::new(Matrix::from_fn(n, 3, |_, _| rng.normal()), Matrix::from_fn(n, 2, |_, _| rng.normal()))?;
    let betas: Vec<f64> = (0..n).map(|i| 0.2 + 0.1 * i as f64).collect();
    let eps = Matrix::from_fn(n, 2, |_, _| rng.normal());
    let diff = diff_loss_with_noise(&sp, &batch, &betas, &eps)?;
    let diff_err = finite_diff_check(
        |flat| {
            let mut p = sp.clone();
            p.assign_flat(flat)?;
            Ok(diff_loss_with_noise(&p, &batch, &betas, &eps)?.loss)
        },
        &sp.flatten(),
        &diff.grads.flatten(),
        eps_fd,
    )?;

    let head = ReprHead::new(3, 5, 4, &mut rng)?;
    let sa = Matrix::from_fn(5, 3, |_, _| rng.normal());
    let norm = norm_loss(&sp, &head, &sa)?;
    let norm_psi = finite_diff_check(
        |flat| {
            let mut p = sp.clone();
            p.psi.assign_flat(flat)?;
            Ok(norm_loss(&p, &head, &sa)?.loss)
        },
        &sp.psi.flatten(),
        &norm.psi.flatten(),
        eps_fd,
    )?;
    let norm_head = finite_diff_check(
        |flat| {
            let mut h = head.clone();
            h.assign_flat(flat)?;
            Ok(norm_loss(&sp, &h, &sa)?.loss)
        },
        &head.flatten(),
        &norm.head.flatten(),
        eps_fd,
    )?;

    let mut twin = TwinCritic::new(3, 4, 6, &mut rng)?;
    for c in twin.online.iter_mut().chain(twin.target.iter_mut()) {
        c.xi = rng.normal_vec(6);
    }
    let policy = Policy::new(2, &[6], vec![-1.0], vec![1.0], &mut rng)?;
    let tb = Batch {
        s: Matrix::from_fn(7, 2, |_, _| rng.normal()),
        a: Matrix::from_fn(7, 1, |_, _| rng.uniform_range(-1.0, 1.0)),
        r: rng.normal_vec(7),
        s_next: Matrix::from_fn(7, 2, |_, _| rng.normal()),
        done: vec![false; 7],
    };
    let params = UpdateParams { gamma: 0.99, temperature: 0.1, bonus_scale: 0.0 };
    let psi_sa = sp.psi.predict(&tb.sa())?;
    let (targets, _) = td_targets(&tb, &psi_sa, &twin, &sp, &policy, &BonusState::Off, &params, &mut rng)?;
    let mut critic_err = 0.0f64;
    for critic in &twin.online {
        let (_, grads) = critic_loss_and_grads(critic, &psi_sa, &targets)?;
        critic_err = critic_err.max(finite_diff_check(
            |flat| {
                let mut c = critic.clone();
                c.assign_flat(flat)?;
                Ok(critic_loss_and_grads(&c, &psi_sa, &targets)?.0)
            },
            &critic.flatten(),
            &grads.flatten(),
            eps_fd,
        )?);
    }

    let q = LinearCriticQ { twin: &twin, sp: &sp };
    let s = Matrix::from_fn(6, 2, |_, _| rng.normal());
    let noise = Matrix::from_fn(6, 1, |_, _| rng.normal());
    let actor = actor_loss_and_grads(&policy, &q, &s, &noise, 0.1)?;
    let actor_err = finite_diff_check(
        |flat| {
            let mut p = policy.clone();
            p.net.assign_flat(flat)?;
            Ok(actor_loss_and_grads(&p, &q, &s, &noise, 0.1)?.loss)
        },
        &policy.net.flatten(),
        &actor.grads.flatten(),
        eps_fd,
    )?;
    Ok(vec![
        ("diff_loss", diff_err),
        ("norm_loss (psi)", norm_psi),
        ("norm_loss (head)", norm_head),
        ("critic_update", critic_err),
        ("actor_update", actor_err),
    ])
}

/// Worst relative gap between TD with one-hot features and exact policy
/// evaluation on a 5-state chain, and the sup gap between `Q*` and the exact
/// value of its greedy policy.
pub fn tabular_fidelity(seed: u64) -> Result<(f64, f64)> {
    let mut rng = seeded_rng(seed);
    let gamma = 0.9;
    let mdp = TabularMdp::chain(5, gamma)?;
    let policy = vec![vec![0.3, 0.7]; 5];
    let exact = policy_eval_exact(&mdp, &policy, gamma)?;
    let td = td_policy_evaluation(&mdp, &policy, gamma, 200_000, 0.1, &mut rng)?;
    let mut td_err = 0.0f64;
    for (row_e, row_t) in exact.iter().zip(&td) {
        for (e, t) in row_e.iter().zip(row_t) {
            td_err = td_err.max((t - e).abs() / e.abs().max(1e-12));
        }
    }
    let q_star = value_iteration(&mdp, gamma, 1e-12)?;
    let greedy = policy_eval_exact(&mdp, &greedy_policy(&q_star), gamma)?;
    let mut gap = 0.0f64;
    for (a, b) in q_star.iter().zip(&greedy) {
        for (x, y) in a.iter().zip(b) {
            gap = gap.max((x - y).abs());
        }
    }
    Ok((td_err, gap))
}

/// Bonus properties, each as a worst-case violation (0 means none, up to rounding).
pub struct BonusReport {
    /// Largest entry of `|Σ⁻¹_SM − (Σφφᵀ + λI)⁻¹|`.
    pub sherman_morrison: f64,
    /// Largest violation of `0 < b ≤ ‖φ‖²/λ` or of non-increase after observing.
    pub elliptical_properties: f64,
    /// Largest violation of `0 ≤ b ≤ 1` or of non-increase after inserting.
    pub kernel_properties: f64,
    /// Largest deviation from the closed-form reference values.
    pub reference_values: f64,
}

pub fn bonus_checks(sequences: usize, instances: usize, seed: u64) -> Result<BonusReport> {
    let mut rng = seeded_rng(seed);
    let dim = 8;
    let mut sm = 0.0f64;
    for _ in 0..sequences {
        let lambda = rng.uniform_range(0.1, 2.0);
        let mut st = EllipticalState::new(dim, lambda)?;
        let mut cov = Matrix::identity(dim).scale(lambda);
        for _ in 0..20 {
            let phi = rng.normal_vec(dim);
            update_covariance(&mut st, &phi)?;
            for i in 0..dim {
                for j in 0..dim {
                    cov.set(i, j, cov.get(i, j) + phi[i] * phi[j]);
                }
            }
        }
        let direct = spd_inverse(&cov)?;
        for (a, b) in st.inv.data().iter().zip(direct.data()) {
            sm = sm.max((a - b).abs());
        }
    }

    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let mut ell = 0.0f64;
    let mut ker = 0.0f64;
    for _ in 0..instances {
        let lambda = rng.uniform_range(0.1, 3.0);
        let mut st = EllipticalState::new(dim, lambda)?;
        let mut ks = KernelState::new(lambda, 1 << 20)?;
        let stored = rng.index(6);
        for _ in 0..stored {
            let v = rng.normal_vec(dim);
            update_covariance(&mut st, &v)?;
            ks.insert(&v, &mut rng)?;
        }
        let probe = rng.normal_vec(dim);
        let b = elliptical_bonus(&st, &probe)?;
        let upper = sq(&probe) / lambda;
        ell = ell.max(if b > 0.0 { (b - upper).max(0.0) / upper } else { 1.0 });
        let k = kernel_bonus(&ks, &probe)?;
        ker = ker.max((-k).max(k - 1.0).max(0.0));

        let extra = rng.normal_vec(dim);
        update_covariance(&mut st, &extra)?;
        ks.insert(&extra, &mut rng)?;
        ell = ell.max((elliptical_bonus(&st, &probe)? - b).max(0.0) / b);
        ker = ker.max((kernel_bonus(&ks, &probe)? - k).max(0.0));
    }

    let mut reference = 0.0f64;
    let unit: Vec<f64> = (0..dim).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let mut st = EllipticalState::new(dim, 1.0)?;
    reference = reference.max((elliptical_bonus(&st, &unit)? - 1.0).abs());
    update_covariance(&mut st, &unit)?;
    reference = reference.max((elliptical_bonus(&st, &unit)? - 0.5).abs());
    let ortho: Vec<f64> = (0..dim).map(|i| if i == 1 { 3.0 } else { 0.0 }).collect();
    reference = reference.max((elliptical_bonus(&st, &ortho)? - 9.0).abs());
    let st4 = EllipticalState::new(dim, 4.0)?;
    reference = reference.max((elliptical_bonus(&st4, &ortho)? - 9.0 / 4.0).abs());
    let mut ks = KernelState::new(1.0, 16)?;
    reference = reference.max((kernel_bonus(&ks, &unit)? - 1.0).abs());
    ks.insert(&unit, &mut rng)?;
    reference = reference.max((kernel_bonus(&ks, &unit)? - 0.5).abs());

    Ok(BonusReport {
        sherman_morrison: sm,
        elliptical_properties: ell,
        kernel_properties: ker,
        reference_values: reference,
    })
}

/// Settings for the score-recovery experiment on the linear-Gaussian task.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecoveryConfig {
    pub seed: u64,
    pub train_samples: usize,
    pub heldout_samples: usize,
    pub psi_dim: usize,
    pub psi_hidden: Vec<usize>,
    pub zeta_hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    /// Peak learning rate; it follows a cosine decay to 1% of this value.
    pub lr: f64,
    /// Steps between learning-rate adjustments.
    pub lr_interval: usize,
}

impl Default for ScoreRecoveryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_samples: 100_000,
            heldout_samples: 1000,
            psi_dim: 8,
            psi_hidden: vec![64],
            zeta_hidden: vec![128],
            steps: 6000,
            batch_size: 4096,
            lr: 2e-3,
            lr_interval: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecoveryReport {
    /// Mean relative L2 error of the learned score over the lowest decile of levels.
    pub relative_error: f64,
    pub final_loss: f64,
    pub train_seconds: f64,
}

/// Trains a score pair on linear-Gaussian transitions and compares it with
/// the closed-form score on held-out data at the smallest noise levels.
pub fn score_recovery(cfg: &ScoreRecoveryConfig) -> Result<ScoreRecoveryReport> {
    let mut rng = seeded_rng(cfg.seed);
    let env = LinearGaussianMdp::default_task(4, 2, 0.7)?;
    let defaults = Config::default();
    let schedule = NoiseSchedule::linear(defaults.noise_levels, defaults.beta_min, defaults.beta_max)?;
    let (sa, next) = gaussian_transitions(&env, cfg.train_samples, &mut rng)?;
    let data = DynamicsBatch::new(sa, next)?;
    let mut sp = ScorePair::new(6, 4, cfg.psi_dim, &cfg.psi_hidden, &cfg.zeta_hidden, &mut rng)?;
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &sp, "score");

    let start = std::time::Instant::now();
    let mut done = 0;
    let mut final_loss = f64::NAN;
    while done < cfg.steps {
        let frac = done as f64 / cfg.steps as f64;
        opt.config.lr = cfg.lr * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()));
        let chunk = cfg.lr_interval.min(cfg.steps - done);
        let rcfg = ReprTrainConfig { steps: chunk, batch_size: cfg.batch_size, norm_weight: 0.0 };
        let losses = train_representation(&data, &mut sp, &mut opt, None, &schedule, &rcfg, &mut rng)?;
        final_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        done += chunk;
    }
    let train_seconds = start.elapsed().as_secs_f64();

    let decile = (schedule.len() / 10).max(1);
    let (sa, next) = gaussian_transitions(&env, cfg.heldout_samples, &mut rng)?;
    let mut per_level = vec![(0.0, 0usize); decile];
    for i in 0..cfg.heldout_samples {
        let level = i % decile;
        let beta = schedule.levels()[level];
        let (s, a) = sa.row(i).split_at(4);
        let eps = rng.normal_vec(4);
        let noisy = corrupt_with_noise(next.row(i), beta, &eps);
        let truth = analytic_score_gaussian(&env, s, a, &noisy, beta)?;
        let pred = score_eval(&sp, s, a, &noisy, beta)?;
        let err = truth.iter().zip(&pred).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = truth.iter().map(|x| x * x).sum::<f64>().sqrt();
        per_level[level].0 += err / scale;
        per_level[level].1 += 1;
    }
    let used: Vec<f64> = per_level.iter().filter(|(_, n)| *n > 0).map(|(e, n)| e / *n as f64).collect();
    Ok(ScoreRecoveryReport {
        relative_error: used.iter().sum::<f64>() / used.len() as f64,
        final_loss,
        train_seconds,
    })
}

/// Every fast check with its acceptance limit.
pub fn battery() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    out.push(Check::above("loss equivalence: gradient cosine", loss_equivalence(100_000, 0)?, 0.99));
    out.push(Check::below("Tweedie identity residual", tweedie_residual(1000, 3)?, 1e-10));
    let (ident, part) = spectral_chain(8192, 4)?;
    out.push(Check::below("spectral identity: worst relative error", ident, 0.05));
    out.push(Check::below("linear partition function: worst relative error", part, 0.05));
    let (k_err, diag) = rff_fidelity(4096, 100, 5)?;
    out.push(Check::below("random features: worst kernel error", k_err, 0.05));
    out.push(Check::below("random features: self inner product deviation", diag, 1e-12));
    for (name, err) in gradient_checks(6)? {
        out.push(Check::below(format!("finite differences: {name}"), err, 1e-4));
    }
    let (td, greedy) = tabular_fidelity(7)?;
    out.push(Check::below("tabular TD vs exact evaluation: worst relative error", td, 0.01));
    out.push(Check::below("greedy policy value vs Q*", greedy, 1e-8));
    let b = bonus_checks(100, 1000, 8)?;
    out.push(Check::below("Sherman-Morrison vs direct inverse", b.sherman_morrison, 1e-8));
    out.push(Check::below("elliptical bonus bound and monotonicity violation", b.elliptical_properties, 1e-12));
    out.push(Check::below("kernel bonus bound and monotonicity violation", b.kernel_properties, 1e-12));
    out.push(Check::below("bonus reference values", b.reference_values, 1e-12));
    Ok(out)
}
