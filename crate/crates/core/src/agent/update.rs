use crate::diffusion::ScorePair;
use crate::error::{Error, Result};
use crate::exploration::BonusState;
use crate::numerics::{Adam, Matrix, MlpGrads, Rng};

use super::critic::{critic_loss_and_grads, CriticOptim, TwinCritic};
use super::policy::Policy;
use super::replay::Batch;

/// Scalars shared by the critic and actor steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateParams {
    pub gamma: f64,
    pub temperature: f64,
    /// Coefficient `α` in `r + α·√b`.
    pub bonus_scale: f64,
}

/// Features the bonus is computed from: target-head `φ` for the elliptical
/// form, raw `ψ` for the kernel form.
pub fn bonus_features(bonus: &BonusState, twin: &TwinCritic, psi: &Matrix) -> Result<Option<Matrix>> {
    Ok(match bonus {
        BonusState::Off => None,
        BonusState::Elliptical(_) => Some(twin.target[0].head.predict(psi)?),
        BonusState::Kernel(_) => Some(psi.clone()),
    })
}

/// Soft TD targets `r + α√b + γ(1 − done)(min Q̄(s′,a′) − T·log π(a′|s′))`
/// with one policy draw per next state. Also returns the batch-mean bonus.
pub fn td_targets(
    batch: &Batch,
    psi_sa: &Matrix,
    twin: &TwinCritic,
    sp: &ScorePair,
    policy: &Policy,
    bonus: &BonusState,
    p: &UpdateParams,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Option<f64>)> {
    let next = policy.sample(&batch.s_next, rng)?;
    let psi_next = sp.psi_features(&batch.s_next.hcat(&next.actions)?)?;
    let q_next = twin.target_min(&psi_next)?;
    let bonuses = match bonus_features(bonus, twin, psi_sa)? {
        Some(f) => Some(bonus.bonus_batch(&f)?),
        None => None,
    };
    let mut y = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let boot = if batch.done[i] { 0.0 } else { p.gamma * (q_next[i] - p.temperature * next.log_prob[i]) };
        let b = bonuses.as_ref().map_or(0.0, |b| p.bonus_scale * b[i].sqrt());
        let target = batch.r[i] + b + boot;
        if !target.is_finite() {
            return Err(Error::Poison(format!("non-finite TD target at batch row {i}")));
        }
        y.push(target);
    }
    let mean_bonus = bonuses.map(|b| b.iter().sum::<f64>() / b.len() as f64);
    Ok((y, mean_bonus))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStats {
    /// Mean of the two critics' TD losses.
    pub loss: f64,
    pub bonus_mean: Option<f64>,
}

/// One Adam step on each online critic against shared soft TD targets.
/// `ψ` is held fixed.
#[allow(clippy::too_many_arguments)]
pub fn critic_update(
    batch: &Batch,
    twin: &mut TwinCritic,
    opts: &mut [CriticOptim; 2],
    sp: &ScorePair,
    policy: &Policy,
    bonus: &BonusState,
    p: &UpdateParams,
    rng: &mut Rng,
) -> Result<CriticStats> {
    if batch.is_empty() {
        return Err(Error::Contract("critic update needs a non-empty batch".into()));
    }
    let psi = sp.psi_features(&batch.sa())?;
    let (y, bonus_mean) = td_targets(batch, &psi, twin, sp, policy, bonus, p, rng)?;
    let mut total = 0.0;
    for (critic, opt) in twin.online.iter_mut().zip(opts.iter_mut()) {
        let (loss, grads) = critic_loss_and_grads(critic, &psi, &y)?;
        opt.step(critic, &grads)?;
        total += loss;
    }
    Ok(CriticStats { loss: total / 2.0, bonus_mean })
}

/// A differentiable action-value surface for the actor.
pub trait ActionValue {
    /// `min_i Q_i(s, a)` per row and its gradient with respect to `a`.
    fn min_q_and_action_grad(&self, s: &Matrix, a: &Matrix) -> Result<(Vec<f64>, Matrix)>;
}

/// The online twin critics composed with the frozen `ψ`.
pub struct LinearCriticQ<'a> {
    pub twin: &'a TwinCritic,
    pub sp: &'a ScorePair,
}

impl ActionValue for LinearCriticQ<'_> {
    fn min_q_and_action_grad(&self, s: &Matrix, a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let n = s.rows();
        let (psi, tape) = self.sp.psi.forward(&s.hcat(a)?)?;
        let heads = [self.twin.online[0].head.forward(&psi)?, self.twin.online[1].head.forward(&psi)?];
        let q1 = heads[0].0.mul_vec(&self.twin.online[0].xi)?;
        let q2 = heads[1].0.mul_vec(&self.twin.online[1].xi)?;
        let first: Vec<bool> = q1.iter().zip(&q2).map(|(a, b)| a <= b).collect();
        let mut g_psi = Matrix::zeros(n, psi.cols());
        for (k, (critic, (phi, head_tape))) in self.twin.online.iter().zip(&heads).enumerate() {
            // Only rows where this critic attains the minimum carry gradient.
            let g_phi = Matrix::from_fn(phi.rows(), phi.cols(), |i, j| if first[i] == (k == 0) { critic.xi[j] } else { 0.0 });
            g_psi.add_assign(&critic.head.backward_input(head_tape, &g_phi)?)?;
        }
        let g_sa = self.sp.psi.backward_input(&tape, &g_psi)?;
        let q = first.iter().zip(q1.iter().zip(&q2)).map(|(&f, (a, b))| if f { *a } else { *b }).collect();
        Ok((q, g_sa.columns(s.cols(), a.cols())))
    }
}

#[derive(Clone, Debug)]
pub struct ActorLoss {
    pub loss: f64,
    pub grads: MlpGrads,
    pub mean_log_prob: f64,
}

/// `mean(T·log π(a|s) − min Q(s,a))` with `a` reparameterised through `eps`.
pub fn actor_loss_and_grads(policy: &Policy, q: &dyn ActionValue, s: &Matrix, eps: &Matrix, temperature: f64) -> Result<ActorLoss> {
    let n = s.rows();
    if n == 0 {
        return Err(Error::Contract("actor update needs a non-empty batch".into()));
    }
    let sample = policy.sample_with_noise(s, eps)?;
    let (qv, gq) = q.min_q_and_action_grad(s, &sample.actions)?;
    let nf = n as f64;
    let loss = sample.log_prob.iter().zip(&qv).map(|(l, q)| temperature * l - q).sum::<f64>() / nf;
    let g_action = gq.scale(-1.0 / nf);
    let g_logp = vec![temperature / nf; n];
    let grads = policy.backward(&sample, &g_action, &g_logp)?;
    Ok(ActorLoss {
        loss,
        grads,
        mean_log_prob: sample.log_prob.iter().sum::<f64>() / nf,
    })
}

/// One Adam step of the actor on fresh reparameterisation noise.
pub fn actor_update(policy: &mut Policy, opt: &mut Adam, q: &dyn ActionValue, s: &Matrix, temperature: f64, rng: &mut Rng) -> Result<f64> {
    let eps = Matrix::from_fn(s.rows(), policy.action_dim(), |_, _| rng.normal());
    let out = actor_loss_and_grads(policy, q, s, &eps, temperature)?;
    opt.step(&mut policy.net, &out.grads)?;
    Ok(out.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::replay::{ReplayBuffer, Transition};
    use crate::exploration::BonusMode;
    use crate::numerics::{seeded_rng, AdamConfig, Params};
    use crate::oracles::finite_diff_check;

    struct Quadratic;

    impl ActionValue for Quadratic {
        fn min_q_and_action_grad(&self, _s: &Matrix, a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
            let q = a.data().iter().map(|x| -(x - 0.5) * (x - 0.5)).collect();
            let g = Matrix::from_fn(a.rows(), 1, |i, _| -2.0 * (a.get(i, 0) - 0.5));
            Ok((q, g))
        }
    }

    struct Zero;

    impl ActionValue for Zero {
        fn min_q_and_action_grad(&self, _s: &Matrix, a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
            Ok((vec![0.0; a.rows()], Matrix::zeros(a.rows(), a.cols())))
        }
    }

    #[test]
    fn entropy_only_objective_widens_the_policy() {
        let mut rng = seeded_rng(1);
        let mut policy = Policy::new(2, &[16], vec![-1.0], vec![1.0], &mut rng).unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(1e-3), &policy.net, "actor");
        let s = Matrix::from_fn(64, 2, |_, _| rng.normal());
        let eps = Matrix::from_fn(64, 1, |_, _| rng.normal());
        let mean_log_std = |p: &Policy| {
            let smp = p.sample_with_noise(&s, &eps).unwrap();
            Policy::sample_log_std(&smp).data().iter().sum::<f64>() / 64.0
        };
        let mut prev = mean_log_std(&policy);
        for _ in 0..20 {
            let out = actor_loss_and_grads(&policy, &Zero, &s, &eps, 0.1).unwrap();
            opt.step(&mut policy.net, &out.grads).unwrap();
            let now = mean_log_std(&policy);
            assert!(now > prev, "{prev} -> {now}");
            prev = now;
        }
    }

    #[test]
    fn bandit_mean_reaches_the_argmax() {
        let mut rng = seeded_rng(2);
        let mut policy = Policy::new(1, &[16], vec![-1.0], vec![1.0], &mut rng).unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(3e-3), &policy.net, "actor");
        let s = Matrix::filled(128, 1, 1.0);
        for _ in 0..500 {
            actor_update(&mut policy, &mut opt, &Quadratic, &s, 1e-3, &mut rng).unwrap();
        }
        let mean = policy.act_deterministic(&[1.0]).unwrap()[0];
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    fn toy_setup(rng: &mut Rng) -> (ScorePair, TwinCritic, Policy) {
        let sp = ScorePair::new(3, 2, 3, &[5], &[5], rng).unwrap();
        let mut twin = TwinCritic::new(3, 4, 6, rng).unwrap();
        for c in twin.online.iter_mut().chain(twin.target.iter_mut()) {
            c.xi = rng.normal_vec(6);
        }
        let policy = Policy::new(2, &[6], vec![-1.0], vec![1.0], rng).unwrap();
        (sp, twin, policy)
    }

    #[test]
    fn actor_gradient_with_frozen_noise() {
        let mut rng = seeded_rng(3);
        let (sp, twin, policy) = toy_setup(&mut rng);
        let q = LinearCriticQ { twin: &twin, sp: &sp };
        let s = Matrix::from_fn(6, 2, |_, _| rng.normal());
        let eps = Matrix::from_fn(6, 1, |_, _| rng.normal());
        let out = actor_loss_and_grads(&policy, &q, &s, &eps, 0.1).unwrap();
        let err = finite_diff_check(
            |flat| {
                let mut p = policy.clone();
                p.net.assign_flat(flat)?;
                Ok(actor_loss_and_grads(&p, &q, &s, &eps, 0.1)?.loss)
            },
            &policy.net.flatten(),
            &out.grads.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_reward_zero_critic_is_a_fixed_point() {
        let mut rng = seeded_rng(4);
        let sp = ScorePair::new(3, 2, 3, &[5], &[5], &mut rng).unwrap();
        let mut twin = TwinCritic::new(3, 4, 6, &mut rng).unwrap();
        let policy = Policy::new(2, &[6], vec![-1.0], vec![1.0], &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(16, 2, 1).unwrap();
        for _ in 0..16 {
            buf.push(Transition {
                s: rng.normal_vec(2),
                a: vec![0.1],
                r: 0.0,
                s_next: rng.normal_vec(2),
                done: false,
            })
            .unwrap();
        }
        let batch = buf.sample(8, &mut rng).unwrap();
        let mut opts = [CriticOptim::new(&twin.online[0], 1e-3, 1e-3, "c1"), CriticOptim::new(&twin.online[1], 1e-3, 1e-3, "c2")];
        let before = twin.clone();
        // Without entropy the bootstrapped value is exactly zero.
        let p = UpdateParams { gamma: 0.99, temperature: 0.0, bonus_scale: 0.0 };
        let stats = critic_update(&batch, &mut twin, &mut opts, &sp, &policy, &BonusState::Off, &p, &mut rng).unwrap();
        assert_eq!(stats.loss, 0.0);
        assert_eq!(twin, before);
    }

    #[test]
    fn bonus_enters_targets() {
        let mut rng = seeded_rng(5);
        let (sp, twin, policy) = toy_setup(&mut rng);
        let mut buf = ReplayBuffer::new(4, 2, 1).unwrap();
        buf.push(Transition { s: vec![0.0, 0.0], a: vec![0.0], r: 1.0, s_next: vec![0.0, 0.0], done: true }).unwrap();
        let batch = buf.sample(1, &mut rng).unwrap();
        let psi = sp.psi_features(&batch.sa()).unwrap();
        let p = UpdateParams { gamma: 0.99, temperature: 0.1, bonus_scale: 0.5 };
        let (y, b) = td_targets(&batch, &psi, &twin, &sp, &policy, &BonusState::Off, &p, &mut rng).unwrap();
        assert_eq!((y[0], b), (1.0, None));
        let bonus = BonusState::new(BonusMode::Kernel, 0, 1.0, 8).unwrap();
        let (y, b) = td_targets(&batch, &psi, &twin, &sp, &policy, &bonus, &p, &mut rng).unwrap();
        assert_eq!(b, Some(1.0));
        assert!((y[0] - 1.5).abs() < 1e-15);
    }
}
