//! Exact save and restore of a [`Trainer`] and of a standalone representation.
//!
//! A checkpoint is one [`TensorStore`]: every parameter, optimiser moment,
//! replay entry and bonus statistic is a tensor, while the config text,
//! counters and RNG positions live in the manifest metadata. Loading rebuilds
//! a fresh trainer from the stored config and then overwrites it, so any
//! shape difference is reported against the expected layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{ReplayBuffer, Trainer, Transition};
use crate::config::Config;
use crate::diffusion::{NoiseSchedule, ReprHead, ScorePair};
use crate::error::{Error, Result};
use crate::exploration::BonusState;
use crate::numerics::{Adam, Matrix, RngState, TensorStore};

pub const CHECKPOINT_STEM: &str = "checkpoint";
pub const REPRESENTATION_STEM: &str = "representation";
const KIND_TRAINER: &str = "trainer";
const KIND_REPR: &str = "representation";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainerMeta {
    kind: String,
    config: String,
    step: u64,
    critic_updates: u64,
    evaluations: u64,
    episode_step: usize,
    buffer_cursor: usize,
    buffer_len: usize,
    env_rng: RngState,
    update_rng: RngState,
    bonus_rng: RngState,
    acc_counts: [u64; 4],
    bonus_count: u64,
    bonus_rebuilds: u64,
    kernel_seen: u64,
    kernel_lambda: f64,
}

fn insert_adam(store: &mut TensorStore, prefix: &str, opt: &Adam) -> Result<()> {
    let (step, m, v) = opt.export();
    store.insert(format!("{prefix}.step"), vec![1], vec![step as f64])?;
    for (i, (a, b)) in m.into_iter().zip(v).enumerate() {
        store.insert(format!("{prefix}.m.{i}"), vec![a.len()], a)?;
        store.insert(format!("{prefix}.v.{i}"), vec![b.len()], b)?;
    }
    Ok(())
}

fn load_adam(store: &TensorStore, prefix: &str, opt: &mut Adam) -> Result<()> {
    let step = store.get_shaped(&format!("{prefix}.step"), &[1])?[0];
    let (_, m0, _) = opt.export();
    let mut m = Vec::with_capacity(m0.len());
    let mut v = Vec::with_capacity(m0.len());
    for (i, t) in m0.iter().enumerate() {
        m.push(store.get_shaped(&format!("{prefix}.m.{i}"), &[t.len()])?.to_vec());
        v.push(store.get_shaped(&format!("{prefix}.v.{i}"), &[t.len()])?.to_vec());
    }
    opt.import(step as u64, m, v)
}

fn insert_matrix(store: &mut TensorStore, name: &str, m: &Matrix) -> Result<()> {
    store.insert(name, vec![m.rows(), m.cols()], m.data().to_vec())
}

fn load_matrix(store: &TensorStore, name: &str, like: &Matrix) -> Result<Matrix> {
    let data = store.get_shaped(name, &[like.rows(), like.cols()])?;
    Matrix::from_vec(like.rows(), like.cols(), data.to_vec())
}

fn rows_of(items: &[Transition], f: impl Fn(&Transition) -> &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(items.len() * width);
    for t in items {
        out.extend_from_slice(f(t));
    }
    out
}

/// Snapshot of everything a run needs to continue bit-for-bit.
pub fn trainer_to_store(t: &Trainer) -> Result<TensorStore> {
    let mut store = TensorStore::new();
    store.insert_params("score", &t.sp)?;
    insert_adam(&mut store, "opt.score", &t.repr_opt)?;
    for i in 0..2 {
        store.insert_params(&format!("critic{i}.online"), &t.twin.online[i])?;
        store.insert_params(&format!("critic{i}.target"), &t.twin.target[i])?;
        insert_adam(&mut store, &format!("opt.critic{i}.head"), &t.critic_opts[i].head)?;
        insert_adam(&mut store, &format!("opt.critic{i}.xi"), &t.critic_opts[i].xi)?;
    }
    store.insert_params("actor", &t.policy.net)?;
    insert_adam(&mut store, "opt.actor", &t.actor_opt)?;

    let items = t.buffer.items();
    let (n, ds, da) = (items.len(), t.buffer.state_dim(), t.buffer.action_dim());
    store.insert("replay.s", vec![n, ds], rows_of(items, |x| &x.s, ds))?;
    store.insert("replay.a", vec![n, da], rows_of(items, |x| &x.a, da))?;
    store.insert("replay.s_next", vec![n, ds], rows_of(items, |x| &x.s_next, ds))?;
    store.insert("replay.r", vec![n], items.iter().map(|x| x.r).collect())?;
    store.insert("replay.done", vec![n], items.iter().map(|x| if x.done { 1.0 } else { 0.0 }).collect())?;

    store.insert("env.state", vec![t.env_state.len()], t.env_state.clone())?;
    store.insert("env.feature", vec![t.feature.len()], t.feature.clone())?;
    store.insert("metrics.sums", vec![4], t.acc.sums.to_vec())?;

    let (mut bonus_count, mut bonus_rebuilds, mut kernel_seen, mut kernel_lambda) = (0, 0, 0, 0.0);
    match &t.bonus {
        BonusState::Off => {}
        BonusState::Elliptical(e) => {
            insert_matrix(&mut store, "bonus.cov", &e.cov)?;
            insert_matrix(&mut store, "bonus.inv", &e.inv)?;
            bonus_count = e.count;
            bonus_rebuilds = e.rebuilds;
        }
        BonusState::Kernel(k) => {
            let dim = t.config.psi_dim;
            store.insert("bonus.points", vec![k.points.len(), dim], k.points.concat())?;
            kernel_seen = k.seen;
            kernel_lambda = k.lambda;
        }
    }

    let meta = TrainerMeta {
        kind: KIND_TRAINER.into(),
        config: t.config.render(),
        step: t.step,
        critic_updates: t.critic_updates,
        evaluations: t.evaluations,
        episode_step: t.episode_step,
        buffer_cursor: t.buffer.cursor(),
        buffer_len: n,
        env_rng: t.env_rng.state(),
        update_rng: t.update_rng.state(),
        bonus_rng: t.bonus_rng.state(),
        acc_counts: t.acc.counts,
        bonus_count,
        bonus_rebuilds,
        kernel_seen,
        kernel_lambda,
    };
    store.meta = serde_json::to_value(meta)?;
    Ok(store)
}

/// Rebuilds a trainer from a snapshot. `config` overrides the stored
/// config when given; it must agree on every shape-determining field, and a
/// mismatch is reported as a shape difference.
pub fn trainer_from_store(store: &TensorStore, config: Option<Config>) -> Result<Trainer> {
    let meta: TrainerMeta = serde_json::from_value(store.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("unreadable trainer metadata: {e}")))?;
    if meta.kind != KIND_TRAINER {
        return Err(Error::Checkpoint(format!("expected a {KIND_TRAINER} checkpoint, found {}", meta.kind)));
    }
    let config = match config {
        Some(c) => c,
        None => Config::parse(&meta.config)?,
    };
    let mut t = Trainer::new(config)?;

    store.load_params("score", &mut t.sp)?;
    load_adam(store, "opt.score", &mut t.repr_opt)?;
    for i in 0..2 {
        store.load_params(&format!("critic{i}.online"), &mut t.twin.online[i])?;
        store.load_params(&format!("critic{i}.target"), &mut t.twin.target[i])?;
        load_adam(store, &format!("opt.critic{i}.head"), &mut t.critic_opts[i].head)?;
        load_adam(store, &format!("opt.critic{i}.xi"), &mut t.critic_opts[i].xi)?;
    }
    store.load_params("actor", &mut t.policy.net)?;
    load_adam(store, "opt.actor", &mut t.actor_opt)?;

    let (n, ds, da) = (meta.buffer_len, t.buffer.state_dim(), t.buffer.action_dim());
    let s = store.get_shaped("replay.s", &[n, ds])?;
    let a = store.get_shaped("replay.a", &[n, da])?;
    let sn = store.get_shaped("replay.s_next", &[n, ds])?;
    let r = store.get_shaped("replay.r", &[n])?;
    let done = store.get_shaped("replay.done", &[n])?;
    let items = (0..n)
        .map(|i| Transition {
            s: s[i * ds..(i + 1) * ds].to_vec(),
            a: a[i * da..(i + 1) * da].to_vec(),
            r: r[i],
            s_next: sn[i * ds..(i + 1) * ds].to_vec(),
            done: done[i] != 0.0,
        })
        .collect();
    t.buffer = ReplayBuffer::from_parts(t.config.buffer_capacity, ds, da, items, meta.buffer_cursor)?;

    t.env_state = store.get_shaped("env.state", &[t.env_state.len()])?.to_vec();
    t.feature = store.get_shaped("env.feature", &[t.feature.len()])?.to_vec();
    t.pipeline.restore(&t.feature)?;
    t.acc.sums.copy_from_slice(store.get_shaped("metrics.sums", &[4])?);
    t.acc.counts = meta.acc_counts;

    match &mut t.bonus {
        BonusState::Off => {}
        BonusState::Elliptical(e) => {
            e.cov = load_matrix(store, "bonus.cov", &e.cov)?;
            e.inv = load_matrix(store, "bonus.inv", &e.inv)?;
            e.count = meta.bonus_count;
            e.rebuilds = meta.bonus_rebuilds;
        }
        BonusState::Kernel(k) => {
            let dim = t.config.psi_dim;
            let (shape, data) = store.get("bonus.points")?;
            if shape.len() != 2 || shape[1] != dim || shape[0] > k.cap {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for bonus.points: stored {shape:?}, expected [≤{}, {dim}]",
                    k.cap
                )));
            }
            k.points = data.chunks(dim).map(<[f64]>::to_vec).collect();
            k.seen = meta.kernel_seen;
            k.lambda = meta.kernel_lambda;
        }
    }

    t.env_rng = crate::numerics::Rng::from_state(&meta.env_rng)?;
    t.update_rng = crate::numerics::Rng::from_state(&meta.update_rng)?;
    t.bonus_rng = crate::numerics::Rng::from_state(&meta.bonus_rng)?;
    t.step = meta.step;
    t.critic_updates = meta.critic_updates;
    t.evaluations = meta.evaluations;
    t.episode_step = meta.episode_step;
    Ok(t)
}

pub fn save_trainer(t: &Trainer, dir: &Path) -> Result<()> {
    trainer_to_store(t)?.save(dir, CHECKPOINT_STEM)
}

pub fn load_trainer(dir: &Path, config: Option<Config>) -> Result<Trainer> {
    trainer_from_store(&TensorStore::load(dir, CHECKPOINT_STEM)?, config)
}

/// A trained score pair with the heads that read it and the schedule it was
/// trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub sp: ScorePair,
    pub heads: Vec<ReprHead>,
    pub schedule: NoiseSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ReprMeta {
    kind: String,
    sa_dim: usize,
    state_dim: usize,
    psi_dim: usize,
    psi_hidden: Vec<usize>,
    zeta_hidden: Vec<usize>,
    heads: Vec<[usize; 3]>,
}

fn hidden_sizes(net: &crate::numerics::Mlp) -> Vec<usize> {
    let layers = net.layers();
    layers[..layers.len() - 1].iter().map(|l| l.out_dim()).collect()
}

pub fn representation_to_store(r: &Representation) -> Result<TensorStore> {
    let mut store = TensorStore::new();
    store.insert_params("score", &r.sp)?;
    for (i, h) in r.heads.iter().enumerate() {
        store.insert_params(&format!("head{i}"), h)?;
    }
    store.insert("schedule.betas", vec![r.schedule.len()], r.schedule.levels().to_vec())?;
    store.meta = serde_json::to_value(ReprMeta {
        kind: KIND_REPR.into(),
        sa_dim: r.sp.sa_dim(),
        state_dim: r.sp.state_dim(),
        psi_dim: r.sp.m(),
        psi_hidden: hidden_sizes(&r.sp.psi),
        zeta_hidden: hidden_sizes(&r.sp.zeta),
        heads: r.heads.iter().map(|h| [h.psi_dim(), h.w1.rows(), h.phi_dim()]).collect(),
    })?;
    Ok(store)
}

pub fn representation_from_store(store: &TensorStore) -> Result<Representation> {
    let meta: ReprMeta = serde_json::from_value(store.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("unreadable representation metadata: {e}")))?;
    if meta.kind != KIND_REPR {
        return Err(Error::Checkpoint(format!("expected a {KIND_REPR} checkpoint, found {}", meta.kind)));
    }
    let mut rng = crate::numerics::seeded_rng(0);
    let mut sp = ScorePair::new(meta.sa_dim, meta.state_dim, meta.psi_dim, &meta.psi_hidden, &meta.zeta_hidden, &mut rng)?;
    store.load_params("score", &mut sp)?;
    let mut heads = Vec::with_capacity(meta.heads.len());
    for (i, [m, f, dphi]) in meta.heads.iter().copied().enumerate() {
        let mut h = ReprHead::new(m, f, dphi, &mut rng)?;
        store.load_params(&format!("head{i}"), &mut h)?;
        heads.push(h);
    }
    let (shape, betas) = store.get("schedule.betas")?;
    if shape.len() != 1 {
        return Err(Error::Checkpoint(format!("schedule.betas must be 1-D, found {shape:?}")));
    }
    Ok(Representation {
        sp,
        heads,
        schedule: NoiseSchedule::from_levels(betas.to_vec())?,
    })
}

pub fn save_representation(r: &Representation, dir: &Path) -> Result<()> {
    representation_to_store(r)?.save(dir, REPRESENTATION_STEM)
}

pub fn load_representation(dir: &Path) -> Result<Representation> {
    representation_from_store(&TensorStore::load(dir, REPRESENTATION_STEM)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Config {
        let mut c = Config::default();
        c.env = "lingauss".into();
        c.warmup_steps = 40;
        c.batch_size = 16;
        c.buffer_capacity = 100;
        c.noise_levels = 10;
        c.psi_dim = 3;
        c.psi_hidden = vec![6];
        c.zeta_hidden = vec![6];
        c.fourier_dim = 4;
        c.phi_dim = 5;
        c.actor_hidden = vec![6];
        c.eval_interval = 50;
        c.eval_episodes = 1;
        c
    }

    #[test]
    fn save_load_save_is_identical() {
        for bonus in ["elliptical", "kernel", "off"] {
            let mut c = tiny();
            c.bonus = bonus.parse().unwrap();
            let mut t = Trainer::new(c).unwrap();
            t.run(130, |_| Ok(())).unwrap();
            let a = trainer_to_store(&t).unwrap();
            let back = trainer_from_store(&a, None).unwrap();
            let b = trainer_to_store(&back).unwrap();
            assert_eq!(a.to_bytes(), b.to_bytes());
            assert_eq!(a.manifest(), b.manifest());
        }
    }

    #[test]
    fn resumed_run_matches_uninterrupted() {
        let c = tiny();
        let mut full = Trainer::new(c.clone()).unwrap();
        let mut expected = Vec::new();
        full.run(200, |m| {
            expected.push(m.clone());
            Ok(())
        })
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut first = Trainer::new(c).unwrap();
        first.run(75, |_| Ok(())).unwrap();
        save_trainer(&first, dir.path()).unwrap();
        let mut resumed = load_trainer(dir.path(), None).unwrap();
        let mut got = Vec::new();
        resumed
            .run(200, |m| {
                got.push(m.clone());
                Ok(())
            })
            .unwrap();
        assert_eq!(got, expected[1..]);
    }

    #[test]
    fn mismatched_dimensions_are_refused() {
        let c = tiny();
        let t = Trainer::new(c.clone()).unwrap();
        let store = trainer_to_store(&t).unwrap();
        let mut other = c;
        other.psi_dim = 4;
        let err = trainer_from_store(&store, Some(other)).unwrap_err().to_string();
        assert!(err.contains("shape mismatch"), "{err}");
    }

    #[test]
    fn representation_round_trip() {
        let mut rng = crate::numerics::seeded_rng(1);
        let sp = ScorePair::new(3, 2, 4, &[5], &[6], &mut rng).unwrap();
        let heads = vec![ReprHead::new(4, 3, 2, &mut rng).unwrap()];
        let r = Representation {
            sp,
            heads,
            schedule: NoiseSchedule::linear(7, 1e-3, 0.1).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        save_representation(&r, dir.path()).unwrap();
        let back = load_representation(dir.path()).unwrap();
        assert_eq!(back, r);
    }
}
