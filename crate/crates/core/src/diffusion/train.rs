use crate::error::{Error, Result};
use crate::numerics::{Adam, Matrix, Params, Rng};

use super::head::ReprHead;
use super::loss::{diff_loss, norm_loss, DynamicsBatch};
use super::schedule::NoiseSchedule;
use super::score::ScorePair;

/// Anything that can hand out reward-free `(s, a, s′)` minibatches.
pub trait DynamicsSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `n` records drawn uniformly with replacement.
    fn sample_dynamics(&self, n: usize, rng: &mut Rng) -> Result<DynamicsBatch>;
}

impl DynamicsSource for DynamicsBatch {
    fn len(&self) -> usize {
        self.sa.rows()
    }

    fn sample_dynamics(&self, n: usize, rng: &mut Rng) -> Result<DynamicsBatch> {
        if self.sa.rows() == 0 {
            return Err(Error::Contract("cannot sample from an empty dataset".into()));
        }
        let idx: Vec<usize> = (0..n).map(|_| rng.index(self.sa.rows())).collect();
        let sa = Matrix::from_fn(n, self.sa.cols(), |i, j| self.sa.get(idx[i], j));
        let next = Matrix::from_fn(n, self.next.cols(), |i, j| self.next.get(idx[i], j));
        DynamicsBatch::new(sa, next)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReprTrainConfig {
    /// Gradient steps per call.
    pub steps: usize,
    pub batch_size: usize,
    /// Weight of the normalisation regulariser; 0 disables it.
    pub norm_weight: f64,
}

/// Runs `cfg.steps` Adam steps on the score-matching loss, plus the
/// weighted normalisation term on `ψ` when enabled. Returns the per-step
/// score-matching loss.
pub fn train_representation<D: DynamicsSource + ?Sized>(
    source: &D,
    sp: &mut ScorePair,
    opt: &mut Adam,
    head: Option<&ReprHead>,
    schedule: &NoiseSchedule,
    cfg: &ReprTrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if cfg.steps == 0 {
        return Ok(Vec::new());
    }
    if source.len() < cfg.batch_size || cfg.batch_size == 0 {
        return Err(Error::Contract(format!(
            "representation training needs at least {} transitions, have {}",
            cfg.batch_size.max(1),
            source.len()
        )));
    }
    let mut history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let batch = source.sample_dynamics(cfg.batch_size, rng)?;
        let mut out = diff_loss(sp, &batch, schedule, rng)?;
        if cfg.norm_weight > 0.0 {
            let head = head.ok_or_else(|| Error::Contract("normalisation term enabled without a head".into()))?;
            let reg = norm_loss(sp, head, &batch.sa)?;
            for (g, r) in out.grads.psi.tensors_mut().into_iter().zip(reg.psi.tensors()) {
                for (x, y) in g.iter_mut().zip(r) {
                    *x += cfg.norm_weight * y;
                }
            }
        }
        opt.step(sp, &out.grads)?;
        history.push(out.loss);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, AdamConfig};

    fn toy_data(rng: &mut Rng, n: usize) -> DynamicsBatch {
        let sa = Matrix::from_fn(n, 3, |_, _| rng.normal());
        let next = Matrix::from_fn(n, 2, |i, j| 0.8 * sa.get(i, j) + 0.3 * rng.normal());
        DynamicsBatch::new(sa, next).unwrap()
    }

    fn setup(seed: u64) -> (DynamicsBatch, ScorePair, Adam, NoiseSchedule, Rng) {
        let mut rng = seeded_rng(seed);
        let data = toy_data(&mut rng, 64);
        let sp = ScorePair::new(3, 2, 4, &[8], &[8], &mut rng).unwrap();
        let opt = Adam::new(AdamConfig::with_lr(1e-3), &sp, "score");
        let schedule = NoiseSchedule::linear(20, 0.05, 0.5).unwrap();
        (data, sp, opt, schedule, rng)
    }

    #[test]
    fn zero_steps_is_a_no_op() {
        let (data, mut sp, mut opt, schedule, mut rng) = setup(1);
        let before = sp.clone();
        let cfg = ReprTrainConfig { steps: 0, batch_size: 16, norm_weight: 0.0 };
        let hist = train_representation(&data, &mut sp, &mut opt, None, &schedule, &cfg, &mut rng).unwrap();
        assert!(hist.is_empty());
        assert_eq!(sp, before);
    }

    #[test]
    fn deterministic_given_seed() {
        let run = || {
            let (data, mut sp, mut opt, schedule, mut rng) = setup(2);
            let cfg = ReprTrainConfig { steps: 25, batch_size: 16, norm_weight: 0.0 };
            let hist = train_representation(&data, &mut sp, &mut opt, None, &schedule, &cfg, &mut rng).unwrap();
            (sp.flatten(), hist)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn too_little_data_rejected() {
        let (data, mut sp, mut opt, schedule, mut rng) = setup(3);
        let cfg = ReprTrainConfig { steps: 1, batch_size: 65, norm_weight: 0.0 };
        assert!(train_representation(&data, &mut sp, &mut opt, None, &schedule, &cfg, &mut rng).is_err());
    }

    #[test]
    fn loss_decreases_on_toy_dynamics() {
        let (data, mut sp, mut opt, schedule, mut rng) = setup(4);
        let cfg = ReprTrainConfig { steps: 400, batch_size: 64, norm_weight: 0.0 };
        let hist = train_representation(&data, &mut sp, &mut opt, None, &schedule, &cfg, &mut rng).unwrap();
        let head: f64 = hist[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = hist[350..].iter().sum::<f64>() / 50.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn norm_term_requires_head() {
        let (data, mut sp, mut opt, schedule, mut rng) = setup(5);
        let cfg = ReprTrainConfig { steps: 1, batch_size: 8, norm_weight: 0.1 };
        assert!(train_representation(&data, &mut sp, &mut opt, None, &schedule, &cfg, &mut rng).is_err());
        let head = ReprHead::new(4, 6, 5, &mut rng).unwrap();
        let hist = train_representation(&data, &mut sp, &mut opt, Some(&head), &schedule, &cfg, &mut rng).unwrap();
        assert_eq!(hist.len(), 1);
    }
}
