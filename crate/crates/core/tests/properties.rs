//! Property suites: squashed-Gaussian density, aggregation ordering, critic
//! regularizers, replay sampling and environment contracts.

mod common;

use asym_ac::agent::Regularizers;
use asym_ac::envs::{Env, EnvId, ACTION_TOLERANCE, EPISODE_LENGTH};
use asym_ac::storage::{ReplayBuffer, TransitionRecord};
use asym_ac::Error;
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn ok(check: Check) -> std::result::Result<(), TestCaseError> {
    check.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(25))]

    #[test]
    fn squashed_density_integrates_to_one(mu in -1.5..1.5f64, log_std in -3.0..0.3f64) {
        ok(density_mass(mu, log_std))?;
    }
}

#[test]
fn entropy_estimate_within_three_standard_errors() {
    // fixed draws: a three-sigma band fails by chance about once in 370 cases
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..10 {
        let mu = rng.random_range(-1.5..1.5);
        let log_std = rng.random_range(-2.0..0.3);
        entropy_matches_quadrature(mu, log_std, 4000, case).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn value_targets_are_ordered(seed in any::<u64>()) {
        ok(targets_ordered(seed))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identical_twins_make_modes_agree(seed in any::<u64>()) {
        ok(identical_twins_agree(seed))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn spectral_norm_has_unit_sigma_after_training(seed in any::<u64>()) {
        ok(spectral_sigma_after_training(seed, 200))?;
    }

    #[test]
    fn output_reset_touches_only_output_layers(seed in any::<u64>()) {
        ok(reset_preserves_hidden_layers(seed))?;
    }

    #[test]
    fn l2_init_pulls_toward_snapshot(seed in any::<u64>()) {
        ok(l2_init_pull(seed, 20))?;
    }
}

#[test]
fn bias_projection_stays_frozen() {
    let regs = Regularizers { bias_correction: true, ..Regularizers::default() };
    let mut agent = small_agent(regs, 8);
    let projection = agent.critics.projection.clone().expect("projection present");
    let critic = agent.critics.online[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = random_batch(3, 1, 32, &mut rng);
    for _ in 0..1000 {
        agent.train_step(&batch, &mut rng).unwrap();
    }
    assert_eq!(agent.critics.projection.as_ref(), Some(&projection));
    assert_ne!(agent.critics.online[0], critic);
}

// ------------------------------------------------------------------ replay

fn record(i: u64, obs: usize, act: usize) -> TransitionRecord {
    TransitionRecord {
        state: vec![i as f64; obs],
        action: vec![0.0; act],
        reward: 0.5,
        next_state: vec![i as f64 + 1.0; obs],
        terminated: false,
        truncated: false,
        episode: i / 1000,
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(1, 1, 100);
    for i in 0..100 {
        buf.push(record(i, 1, 1)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut counts = [0u64; 100];
    let draws = 100_000;
    for _ in 0..draws / 100 {
        for i in buf.sample_indices(100, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let expected = draws as f64 / 100.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(99.0).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

#[test]
fn million_pushes_then_sample() {
    let cap = 1_000_000;
    let mut buf = ReplayBuffer::new(1, 1, cap);
    for i in 0..cap as u64 + 17 {
        buf.push(record(i, 1, 1)).unwrap();
    }
    assert_eq!(buf.len(), cap);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (batch, idx) = buf.sample(4096, &mut rng).unwrap();
    assert!(idx.iter().all(|&i| i < cap));
    // the 17 oldest records were evicted
    assert!(batch.states.as_slice().iter().all(|&s| s >= 17.0));
}

// -------------------------------------------------------------------- envs

fn within_reset_bounds(id: EnvId, obs: &[f64]) -> bool {
    let c = |bound: f64, x: f64| x.abs() <= bound + 1e-12;
    match id {
        EnvId::PendulumSwingup => c(0.1f64.sin(), obs[0]) && obs[1] <= -(0.1f64.cos()) + 1e-12 && c(0.05, obs[2]),
        EnvId::CartpoleSwingup => {
            c(0.05, obs[0]) && obs[1] <= -(0.05f64.cos()) + 1e-12 && c(0.05f64.sin(), obs[2]) && c(0.05, obs[3]) && c(0.05, obs[4])
        }
        EnvId::PointmassReacher => [0, 1, 4, 5].iter().all(|&i| c(0.24, obs[i])) && obs[2] == 0.0 && obs[3] == 0.0,
    }
}

#[test]
fn ten_thousand_resets_stay_in_bounds() {
    for id in EnvId::ALL {
        let mut env = Env::new(id);
        for seed in 0..10_000 {
            let obs = env.reset(seed);
            assert_eq!(obs.len(), id.spec().obs_dim);
            assert!(obs.iter().all(|x| x.is_finite()));
            assert!(within_reset_bounds(id, &obs), "{id} seed {seed}: {obs:?}");
        }
    }
}

fn env_id() -> impl Strategy<Value = EnvId> {
    prop::sample::select(EnvId::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rewards_bounded_and_observations_finite(id in env_id(), seed in any::<u64>()) {
        let mut env = Env::new(id);
        env.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..300 {
            let a: Vec<f64> = (0..id.spec().action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let out = env.step(&a).unwrap();
            prop_assert!((0.0..=1.0).contains(&out.reward));
            prop_assert!(out.observation.iter().all(|x| x.is_finite()));
            prop_assert!(!out.terminated);
        }
    }

    #[test]
    fn step_depends_only_on_state_and_action(id in env_id(), seed in any::<u64>(), warm in 0usize..200) {
        let mut env = Env::new(id);
        env.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut act = || -> Vec<f64> { (0..id.spec().action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect() };
        for _ in 0..warm {
            env.step(&act()).unwrap();
        }
        let saved = env.state().clone();
        let actions: Vec<Vec<f64>> = (0..20).map(|_| act()).collect();
        let first: Vec<_> = actions.iter().map(|a| env.step(a).unwrap()).collect();
        let mut other = Env::new(id);
        other.reset(seed.wrapping_add(1));
        other.restore(saved).unwrap();
        let second: Vec<_> = actions.iter().map(|a| other.step(a).unwrap()).collect();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn marginal_actions_are_clipped_and_others_rejected(id in env_id(), over in 0.0..1.0f64) {
        let dim = id.spec().action_dim;
        let mut env = Env::new(id);
        let inside = 1.0 + over * ACTION_TOLERANCE;
        let mut reference = env.clone();
        prop_assert_eq!(env.step(&vec![inside; dim]).unwrap(), reference.step(&vec![1.0; dim]).unwrap());
        let outside = 1.0 + ACTION_TOLERANCE * (1.5 + over);
        prop_assert!(matches!(env.step(&vec![-outside; dim]), Err(Error::InvalidInput(_))));
        prop_assert!(env.step(&vec![f64::NAN; dim]).is_err());
    }
}

#[test]
fn episodes_truncate_at_one_thousand_steps() {
    let mut env = Env::new(EnvId::PointmassReacher);
    env.reset(3);
    let mut total = 0.0;
    for t in 1..=EPISODE_LENGTH {
        let out = env.step(&[0.0, 0.0]).unwrap();
        total += out.reward;
        assert_eq!(out.truncated, t == EPISODE_LENGTH);
    }
    assert!((0.0..=EPISODE_LENGTH as f64).contains(&total));
    assert!(env.step(&[0.0, 0.0]).is_err());
}
