//! Score-matching representation learning: noise schedule, corruption,
//! the factorized score `ψᵀζ`, its training losses, and the spectral head `φ_θ`.

pub mod head;
pub mod loss;
pub mod schedule;
pub mod score;
pub mod train;

pub use head::{phi, HeadGrads, HeadTape, ReprHead};
pub use loss::{
    corrupt_batch, denoising_loss, diff_loss, diff_loss_with_noise, draw_noise, norm_loss, norm_term, DynamicsBatch, LossAndGrads, NormLoss,
    NORM_LOG_FLOOR,
};
pub use schedule::{corrupt, corrupt_with_noise, NoiseSchedule};
pub use score::{score_eval, zeta_input, ScoreForward, ScorePair, ScorePairGrads};
pub use train::{train_representation, DynamicsSource, ReprTrainConfig};
