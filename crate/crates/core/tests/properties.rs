//! Property tests for invariants that must hold for arbitrary inputs.

use diffsr::agent::{Policy, ReplayBuffer, Transition};
use diffsr::config::Config;
use diffsr::diffusion::{corrupt_with_noise, NoiseSchedule};
use diffsr::envs::LinearGaussianMdp;
use diffsr::exploration::{elliptical_bonus, kernel_bonus, update_covariance, EllipticalState, KernelState};
use diffsr::numerics::{seeded_rng, spd_inverse, Matrix, TensorStore};
use diffsr::oracles::{analytic_score_gaussian, posterior_mean_gaussian};
use diffsr::spectral::{rff_features, RffBank};
use proptest::prelude::*;

fn vec_of(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tweedie_identity_holds_everywhere(
        s in vec_of(4, -5.0, 5.0),
        a in vec_of(2, -1.0, 1.0),
        noisy in vec_of(4, -8.0, 8.0),
        beta in 1e-6f64..0.999,
    ) {
        let env = LinearGaussianMdp::default_task(4, 2, 0.7).unwrap();
        let score = analytic_score_gaussian(&env, &s, &a, &noisy, beta).unwrap();
        let mean = posterior_mean_gaussian(&env, &s, &a, &noisy, beta).unwrap();
        for j in 0..4 {
            let r = noisy[j] + beta * score[j] - (1.0 - beta).sqrt() * mean[j];
            prop_assert!(r.abs() < 1e-9, "residual {r}");
        }
    }

    #[test]
    fn corruption_interpolates(next in vec_of(3, -4.0, 4.0), eps in vec_of(3, -4.0, 4.0), beta in 0.0f64..1.0) {
        let out = corrupt_with_noise(&next, beta, &eps);
        for j in 0..3 {
            let want = (1.0 - beta).sqrt() * next[j] + beta.sqrt() * eps[j];
            prop_assert!((out[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_draws_stay_on_the_grid(levels in 2usize..200, seed in any::<u64>()) {
        let sch = NoiseSchedule::linear(levels, 1e-4, 0.02).unwrap();
        let mut rng = seeded_rng(seed);
        for _ in 0..20 {
            let b = sch.sample(&mut rng);
            prop_assert!(sch.levels().contains(&b));
        }
    }

    #[test]
    fn sherman_morrison_tracks_the_direct_inverse(seed in any::<u64>(), lambda in 0.05f64..5.0, steps in 1usize..30) {
        let mut rng = seeded_rng(seed);
        let d = 8;
        let mut st = EllipticalState::new(d, lambda).unwrap();
        for _ in 0..steps {
            let phi = rng.normal_vec(d);
            update_covariance(&mut st, &phi).unwrap();
        }
        let direct = spd_inverse(&st.cov).unwrap();
        prop_assert!(st.inv.max_abs_diff(&direct).unwrap() < 1e-8);
    }

    #[test]
    fn elliptical_bonus_bounds(seed in any::<u64>(), lambda in 0.05f64..5.0, stored in 0usize..10) {
        let mut rng = seeded_rng(seed);
        let mut st = EllipticalState::new(6, lambda).unwrap();
        for _ in 0..stored {
            update_covariance(&mut st, &rng.normal_vec(6)).unwrap();
        }
        let phi = rng.normal_vec(6);
        let b = elliptical_bonus(&st, &phi).unwrap();
        let upper = phi.iter().map(|x| x * x).sum::<f64>() / lambda;
        prop_assert!(b > 0.0 && b <= upper * (1.0 + 1e-12), "{b} {upper}");
    }

    #[test]
    fn kernel_bonus_is_a_variance(seed in any::<u64>(), lambda in 0.0f64..3.0, stored in 0usize..12) {
        let mut rng = seeded_rng(seed);
        let mut ks = KernelState::new(lambda, 64).unwrap();
        for _ in 0..stored {
            let p = rng.normal_vec(3);
            ks.insert(&p, &mut rng).unwrap();
        }
        let b = kernel_bonus(&ks, &rng.normal_vec(3)).unwrap();
        prop_assert!((0.0..=1.0).contains(&b), "{b}");
    }

    #[test]
    fn random_features_have_unit_self_product(seed in any::<u64>(), x in vec_of(3, -10.0, 10.0)) {
        let mut rng = seeded_rng(seed);
        let bank = RffBank::new(256, 3, &mut rng).unwrap();
        let f = rff_features(&bank, &x).unwrap();
        let n2: f64 = f.iter().map(|v| v * v).sum();
        prop_assert!((n2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn policy_actions_respect_bounds(seed in any::<u64>(), obs in vec_of(3, -1e3, 1e3)) {
        let mut rng = seeded_rng(seed);
        let policy = Policy::new(3, &[8], vec![-2.0, 0.5], vec![2.0, 1.5], &mut rng).unwrap();
        for a in [policy.act(&obs, &mut rng).unwrap(), policy.act_deterministic(&obs).unwrap()] {
            prop_assert!((-2.0..=2.0).contains(&a[0]) && (0.5..=1.5).contains(&a[1]), "{a:?}");
        }
        let smp = policy.sample(&Matrix::row_vector(&obs), &mut rng).unwrap();
        prop_assert!(smp.log_prob.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn replay_keeps_the_latest_entries(cap in 1usize..20, pushes in 0usize..60, seed in any::<u64>()) {
        let mut buf = ReplayBuffer::new(cap, 1, 1).unwrap();
        for i in 0..pushes {
            buf.push(Transition { s: vec![i as f64], a: vec![0.0], r: i as f64, s_next: vec![0.0], done: false }).unwrap();
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
        if !buf.is_empty() {
            let mut rng = seeded_rng(seed);
            let oldest = pushes.saturating_sub(cap) as f64;
            for r in buf.sample(buf.len(), &mut rng).unwrap().r {
                prop_assert!(r >= oldest && r < pushes as f64);
            }
        }
    }

    #[test]
    fn tensor_store_round_trips_bitwise(data in prop::collection::vec(any::<f64>(), 0..40), split in 0usize..40) {
        let split = split.min(data.len());
        let mut s = TensorStore::new();
        s.insert("a", vec![split], data[..split].to_vec()).unwrap();
        s.insert("b", vec![data.len() - split], data[split..].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path(), "t").unwrap();
        let back = TensorStore::load(dir.path(), "t").unwrap();
        prop_assert_eq!(back.to_bytes(), s.to_bytes());
    }

    #[test]
    fn config_render_parses_back(
        seed in any::<u32>(),
        gamma in 0.0f64..0.999,
        lr in 1e-6f64..1.0,
        batch in 1usize..512,
        hidden in prop::collection::vec(1usize..64, 1..4),
        bonus in prop::sample::select(vec!["off", "elliptical", "kernel"]),
    ) {
        let mut c = Config::default();
        c.seed = seed as u64;
        c.gamma = gamma;
        c.lr_actor = lr;
        c.batch_size = batch;
        c.actor_hidden = hidden;
        c.bonus = bonus.parse().unwrap();
        let back = Config::parse(&c.render()).unwrap();
        prop_assert_eq!(back, c);
    }
}
