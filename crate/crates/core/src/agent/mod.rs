//! Policy optimisation on top of the learned representation: linear twin
//! critics, a squashed-Gaussian actor, replay, and the online training loop.

pub mod critic;
pub mod policy;
pub mod replay;
pub mod tabular;
pub mod trainer;
pub mod update;

pub use critic::{critic_loss_and_grads, q_value, Critic, CriticGrads, CriticOptim, TwinCritic, Which};
pub use policy::{Policy, PolicySample, LOG_STD_MAX, LOG_STD_MIN};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use tabular::{fit_linear_q, td_policy_evaluation};
pub use trainer::{Metrics, Trainer};
pub use update::{actor_loss_and_grads, actor_update, bonus_features, critic_update, td_targets, ActionValue, ActorLoss, CriticStats, LinearCriticQ, UpdateParams};
