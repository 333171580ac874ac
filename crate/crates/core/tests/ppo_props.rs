mod common;

use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use taxtrade::env::{EnvConfig, TradingEnv};
use taxtrade::market::synthetic_gbm;
use taxtrade::nn::PolicyBundle;
use taxtrade::ppo::{self, epoch_rng, init_bundle, run_epoch, train, PpoConfig, TrainOptions};

#[test]
fn gae_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    assert!(common::check_gae(&mut rng, 1000, 10) <= 1e-10);
}

#[test]
fn gae_rejects_mismatched_lengths() {
    assert!(ppo::compute_gae(&[1.0, 2.0], &[0.0, 0.0], &[false, false], 0.9, 0.9).is_err());
}

fn small() -> (PpoConfig, EnvConfig, Arc<taxtrade::market::PriceSeries>) {
    let config = PpoConfig { epochs: 4, steps_per_epoch: 150, policy_update_iters: 10, value_update_iters: 10, ..PpoConfig::default() };
    let env = EnvConfig { episode_length: 40, ..EnvConfig::default() };
    (config, env, Arc::new(synthetic_gbm(12, 200, 60.0, 0.1, 0.3).unwrap()))
}

#[test]
fn resume_from_checkpoint_reproduces_the_run() {
    let (config, env, series) = small();
    let full = train(&config, &env, series.clone(), 9, TrainOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.json");
    let metrics = dir.path().join("m.csv");
    let half = PpoConfig { epochs: 2, ..config.clone() };
    let opts = |resume| TrainOptions { checkpoint_path: Some(ck.clone()), metrics_path: Some(metrics.clone()), resume };
    train(&half, &env, series.clone(), 9, opts(None)).unwrap();
    let loaded = PolicyBundle::load(&ck).unwrap();
    assert_eq!(ppo::epochs_completed(&loaded), 2);
    let rest = train(&config, &env, series, 9, opts(Some(loaded))).unwrap();

    assert_eq!(rest.bundle, full.bundle);
    assert_eq!(rest.metrics.len(), 2);
    for (a, b) in rest.metrics.iter().zip(&full.metrics[2..]) {
        assert!(a.same_results(b));
    }
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert_eq!(text.lines().next().unwrap(), ppo::METRICS_HEADER);
}

#[test]
fn zero_epochs_returns_initial_bundle() {
    let (config, env, series) = small();
    let config = PpoConfig { epochs: 0, ..config };
    let out = train(&config, &env, series, 3, TrainOptions::default()).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(out.bundle, init_bundle(&env, &config, 3));
}

#[test]
fn epoch_is_deterministic() {
    let (config, env_config, series) = small();
    let run = || {
        let mut env = TradingEnv::new(env_config.clone(), series.clone()).unwrap();
        let mut bundle = init_bundle(&env_config, &config, 5);
        let m = run_epoch(&mut env, &mut bundle, &config, 0, &mut epoch_rng(5, 0)).unwrap();
        (bundle, m)
    };
    let (b1, m1) = run();
    let (b2, m2) = run();
    assert_eq!(b1, b2);
    assert!(m1.same_results(&m2));
    assert!(b1.policy.is_finite() && b1.value.is_finite());
}

#[test]
fn different_seeds_differ() {
    let (config, env, series) = small();
    let config = PpoConfig { epochs: 1, ..config };
    let a = train(&config, &env, series.clone(), 1, TrainOptions::default()).unwrap();
    let b = train(&config, &env, series, 2, TrainOptions::default()).unwrap();
    assert_ne!(a.bundle.policy, b.bundle.policy);
}

#[test]
fn learns_on_a_rising_series() {
    let l = common::learning_smoke(17, 25, 400, 50);
    assert!(l.z() >= 3.0, "{l:?}");
}

#[test]
fn kl_early_stop_cuts_policy_iterations() {
    let (config, env_config, series) = small();
    let mut env = TradingEnv::new(env_config.clone(), series).unwrap();
    let bundle = init_bundle(&env_config, &config, 5);
    let (mut buffer, _, last) = ppo::collect_rollout(&mut env, &bundle, &config, &mut epoch_rng(5, 0)).unwrap();
    buffer.finalize(last, config.gamma, config.gae_lambda, true).unwrap();

    let stop = PpoConfig { policy_update_iters: 80, policy_lr: 0.05, target_kl: Some(0.001), ..config.clone() };
    let s = ppo::update(&mut bundle.clone(), &buffer, &stop).unwrap();
    assert!(s.policy_iters < 80);
    assert!(s.kl > 0.001);

    let free = PpoConfig { target_kl: None, ..stop };
    assert_eq!(ppo::update(&mut bundle.clone(), &buffer, &free).unwrap().policy_iters, 80);
}
