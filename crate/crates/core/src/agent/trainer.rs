//! The online loop: act, step, record, then update the representation,
//! critics and actor, with periodic deterministic evaluation.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::diffusion::{train_representation, NoiseSchedule, ReprTrainConfig, ScorePair};
use crate::envs::{Env, Environment, ObservationPipeline, VelocityMask};
use crate::error::{Error, Result};
use crate::exploration::BonusState;
use crate::numerics::{Adam, AdamConfig, Matrix, Rng};

use super::critic::{CriticOptim, TwinCritic};
use super::policy::Policy;
use super::replay::{ReplayBuffer, Transition};
use super::update::{actor_update, critic_update, LinearCriticQ, UpdateParams};

/// One line of the metrics stream. Absent values serialise as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub step: u64,
    pub eval_return_mean: Option<f64>,
    pub eval_return_std: Option<f64>,
    pub diff_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub bonus_mean: Option<f64>,
}

/// Running sums of the losses since the last metrics line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossAccumulator {
    pub sums: [f64; 4],
    pub counts: [u64; 4],
}

impl LossAccumulator {
    const DIFF: usize = 0;
    const CRITIC: usize = 1;
    const ACTOR: usize = 2;
    const BONUS: usize = 3;

    fn add(&mut self, slot: usize, v: f64) {
        self.sums[slot] += v;
        self.counts[slot] += 1;
    }

    fn mean(&self, slot: usize) -> Option<f64> {
        (self.counts[slot] > 0).then(|| self.sums[slot] / self.counts[slot] as f64)
    }
}

/// RNG stream indices derived from the run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const ENV: u64 = 1;
    pub const UPDATE: u64 = 2;
    pub const BONUS: u64 = 3;
    /// Evaluation `k` uses stream `EVAL_BASE + k`.
    pub const EVAL_BASE: u64 = 1 << 32;
}

/// Complete state of an online run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: Config,
    pub env: Env,
    pub pipeline: ObservationPipeline,
    pub schedule: NoiseSchedule,
    pub sp: ScorePair,
    pub repr_opt: Adam,
    pub twin: TwinCritic,
    pub critic_opts: [CriticOptim; 2],
    pub policy: Policy,
    pub actor_opt: Adam,
    pub buffer: ReplayBuffer,
    pub bonus: BonusState,
    pub env_rng: Rng,
    pub update_rng: Rng,
    pub bonus_rng: Rng,
    pub env_state: Vec<f64>,
    pub feature: Vec<f64>,
    pub episode_step: usize,
    pub step: u64,
    pub critic_updates: u64,
    pub evaluations: u64,
    pub acc: LossAccumulator,
}

/// Observation pipeline for a config: optional velocity mask plus history window.
pub fn make_pipeline(config: &Config, env: &Env) -> Result<ObservationPipeline> {
    let spec = env.spec();
    let mask = if config.masked() {
        Some(VelocityMask::new(spec.obs_dim, spec.velocity_indices.clone())?)
    } else {
        None
    };
    ObservationPipeline::new(spec.obs_dim, spec.action_dim, mask, config.history_len)
}

impl Trainer {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let (env, _) = Env::from_name(&config.env)?;
        let spec = env.spec().clone();
        let mut pipeline = make_pipeline(&config, &env)?;
        let d = pipeline.feature_dim();
        let k = spec.action_dim;
        let schedule = NoiseSchedule::linear(config.noise_levels, config.beta_min, config.beta_max)?;

        let mut init = Rng::with_stream(config.seed, streams::INIT);
        let sp = ScorePair::new(d + k, d, config.psi_dim, &config.psi_hidden, &config.zeta_hidden, &mut init)?;
        let twin = TwinCritic::new(config.psi_dim, config.fourier_dim, config.phi_dim, &mut init)?;
        let policy = Policy::new(d, &config.actor_hidden, spec.action_low.clone(), spec.action_high.clone(), &mut init)?;

        let repr_opt = Adam::new(AdamConfig::with_lr(config.lr_repr), &sp, "score");
        let critic_opts = [
            CriticOptim::new(&twin.online[0], config.lr_repr, config.lr_critic, "critic1"),
            CriticOptim::new(&twin.online[1], config.lr_repr, config.lr_critic, "critic2"),
        ];
        let actor_opt = Adam::new(AdamConfig::with_lr(config.lr_actor), &policy.net, "actor");
        let buffer = ReplayBuffer::new(config.buffer_capacity, d, k)?;
        let bonus = BonusState::new(config.bonus, config.phi_dim, config.bonus_lambda, config.kernel_cap)?;

        let mut env_rng = Rng::with_stream(config.seed, streams::ENV);
        let env_state = env.reset(&mut env_rng);
        let feature = pipeline.reset(&env.observe(&env_state))?;
        Ok(Self {
            env,
            pipeline,
            schedule,
            sp,
            repr_opt,
            twin,
            critic_opts,
            policy,
            actor_opt,
            buffer,
            bonus,
            env_rng,
            update_rng: Rng::with_stream(config.seed, streams::UPDATE),
            bonus_rng: Rng::with_stream(config.seed, streams::BONUS),
            env_state,
            feature,
            episode_step: 0,
            step: 0,
            critic_updates: 0,
            evaluations: 0,
            acc: LossAccumulator::default(),
            config,
        })
    }

    fn update_params(&self) -> UpdateParams {
        UpdateParams {
            gamma: self.config.gamma,
            temperature: self.config.temperature,
            bonus_scale: self.config.bonus_scale,
        }
    }

    /// Runs until `self.step == until`, handing every metrics line to `sink`.
    /// Failures carry the step at which they happened.
    pub fn run(&mut self, until: u64, mut sink: impl FnMut(&Metrics) -> Result<()>) -> Result<()> {
        while self.step < until {
            let step = self.step;
            let line = self.step_once().map_err(|e| Error::AtStep { step, source: Box::new(e) })?;
            if let Some(m) = line {
                sink(&m)?;
            }
        }
        Ok(())
    }

    /// One environment step and the updates that follow it. Returns a
    /// metrics line at evaluation boundaries.
    pub fn step_once(&mut self) -> Result<Option<Metrics>> {
        let spec = self.env.spec().clone();
        let action = if self.step < self.config.warmup_steps {
            (0..spec.action_dim)
                .map(|j| self.env_rng.uniform_range(spec.action_low[j], spec.action_high[j]))
                .collect()
        } else {
            self.policy.act(&self.feature, &mut self.env_rng)?
        };
        let out = self.env.step(&self.env_state, &action, &mut self.env_rng)?;
        let next_feature = self.pipeline.step(&self.env.observe(&out.state), &action)?;

        if !matches!(self.bonus, BonusState::Off) {
            let psi = Matrix::row_vector(&self.sp.psi.predict_one(&[self.feature.as_slice(), &action].concat())?);
            let f = match self.bonus {
                BonusState::Elliptical(_) => self.twin.target[0].head.predict(&psi)?,
                _ => psi,
            };
            self.bonus.observe(f.row(0), &mut self.bonus_rng)?;
        }

        self.buffer.push(Transition {
            s: std::mem::replace(&mut self.feature, next_feature.clone()),
            a: action,
            r: out.reward,
            s_next: next_feature,
            done: out.done,
        })?;
        self.env_state = out.state;
        self.episode_step += 1;
        if out.done || self.episode_step >= spec.horizon {
            self.env_state = self.env.reset(&mut self.env_rng);
            self.feature = self.pipeline.reset(&self.env.observe(&self.env_state))?;
            self.episode_step = 0;
        }

        if self.step + 1 >= self.config.warmup_steps && self.buffer.len() >= self.config.batch_size {
            self.update()?;
        }
        self.step += 1;

        if self.step % self.config.eval_interval == 0 {
            let (mean, std) = self.evaluate(self.evaluations)?;
            self.evaluations += 1;
            let acc = std::mem::take(&mut self.acc);
            return Ok(Some(Metrics {
                step: self.step,
                eval_return_mean: Some(mean),
                eval_return_std: Some(std),
                diff_loss: acc.mean(LossAccumulator::DIFF),
                critic_loss: acc.mean(LossAccumulator::CRITIC),
                actor_loss: acc.mean(LossAccumulator::ACTOR),
                bonus_mean: acc.mean(LossAccumulator::BONUS),
            }));
        }
        Ok(None)
    }

    /// Representation (every `feature_update_ratio` critic updates), critic, actor, targets.
    fn update(&mut self) -> Result<()> {
        let cfg = &self.config;
        if self.critic_updates % cfg.feature_update_ratio == 0 {
            let rcfg = ReprTrainConfig {
                steps: cfg.repr_steps,
                batch_size: cfg.batch_size,
                norm_weight: cfg.norm_weight,
            };
            let head = (cfg.norm_weight > 0.0).then_some(&self.twin.online[0].head);
            let hist = train_representation(&self.buffer, &mut self.sp, &mut self.repr_opt, head, &self.schedule, &rcfg, &mut self.update_rng)?;
            for l in hist {
                self.acc.add(LossAccumulator::DIFF, l);
            }
        }
        let p = self.update_params();
        let batch = self.buffer.sample(self.config.batch_size, &mut self.update_rng)?;
        let stats = critic_update(&batch, &mut self.twin, &mut self.critic_opts, &self.sp, &self.policy, &self.bonus, &p, &mut self.update_rng)?;
        self.acc.add(LossAccumulator::CRITIC, stats.loss);
        if let Some(b) = stats.bonus_mean {
            self.acc.add(LossAccumulator::BONUS, b);
        }
        let q = LinearCriticQ { twin: &self.twin, sp: &self.sp };
        let actor_loss = actor_update(&mut self.policy, &mut self.actor_opt, &q, &batch.s, p.temperature, &mut self.update_rng)?;
        self.acc.add(LossAccumulator::ACTOR, actor_loss);
        self.twin.soft_update(self.config.tau)?;
        self.critic_updates += 1;
        Ok(())
    }

    /// Mean and standard deviation of undiscounted returns over
    /// `eval_episodes` deterministic-policy episodes. Uses its own RNG
    /// stream and leaves training state untouched.
    pub fn evaluate(&self, index: u64) -> Result<(f64, f64)> {
        let mut rng = Rng::with_stream(self.config.seed, streams::EVAL_BASE + index);
        let returns = (0..self.config.eval_episodes)
            .map(|_| rollout(&self.env, &self.pipeline, &self.policy, &mut rng))
            .collect::<Result<Vec<f64>>>()?;
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        Ok((mean, var.sqrt()))
    }
}

/// Return of one episode under the squashed mean action.
pub fn rollout(env: &Env, pipeline: &ObservationPipeline, policy: &Policy, rng: &mut Rng) -> Result<f64> {
    let mut pipe = pipeline.clone();
    let mut state = env.reset(rng);
    let mut feature = pipe.reset(&env.observe(&state))?;
    let mut total = 0.0;
    for _ in 0..env.spec().horizon {
        let action = policy.act_deterministic(&feature)?;
        let out = env.step(&state, &action, rng)?;
        total += out.reward;
        feature = pipe.step(&env.observe(&out.state), &action)?;
        state = out.state;
        if out.done {
            break;
        }
    }
    Ok(total)
}
