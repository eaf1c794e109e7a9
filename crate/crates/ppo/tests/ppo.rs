use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rock_core::config::ScenarioConfig;
use rock_core::env::Env;
use rock_core::nn::{value_net, Activation, Mlp};
use rock_core::observation::{FRAME_LEN, OBS_LEN};
use rock_ppo::gae;
use rock_ppo::policy::{log_prob, GaussianPolicy};
use rock_ppo::rollout::{collect_rollouts, RolloutBatch, Sampling, Worker};
use rock_ppo::update::{ppo_update, policy_objective, surrogate_active, Optimizers, PolicySample};

/// Advantage as the explicit double sum over future TD residuals, cut at
/// episode ends.
fn gae_oracle(r: &[f64], v: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let value_at = |t: usize| if t < n { v[t] } else { bootstrap };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for l in t..n {
                let next = if dones[l] { 0.0 } else { gamma * value_at(l + 1) };
                let delta = r[l] + next - v[l];
                total += (gamma * lambda).powi((l - t) as i32) * delta;
                if dones[l] {
                    break;
                }
            }
            total
        })
        .collect()
}

#[test]
fn gae_matches_brute_force_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let n = 6;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.25)).collect();
        let (gamma, lambda) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let boot = rng.random_range(-2.0..2.0);
        let (adv, ret) = gae(&r, &v, &dones, boot, gamma, lambda).unwrap();
        let want = gae_oracle(&r, &v, &dones, boot, gamma, lambda);
        for t in 0..n {
            assert!((adv[t] - want[t]).abs() < 1e-10, "t={t}: {} vs {}", adv[t], want[t]);
            assert!((ret[t] - (adv[t] + v[t])).abs() < 1e-15);
        }
    }
}

fn tiny_policy(rng: &mut ChaCha8Rng) -> GaussianPolicy {
    let mean = Mlp::random(&[3, 5, 4, 1], Activation::Elu, Activation::Identity, 1.0, rng).unwrap();
    GaussianPolicy { mean, log_std: -0.7 }
}

struct Data {
    obs: Vec<Vec<f64>>,
    u: Vec<f64>,
    old: Vec<f64>,
    adv: Vec<f64>,
}

impl Data {
    fn samples(&self) -> Vec<PolicySample<'_>> {
        (0..self.obs.len())
            .map(|k| PolicySample {
                obs: &self.obs[k],
                pre_action: self.u[k],
                old_log_prob: self.old[k],
                advantage: self.adv[k],
            })
            .collect()
    }
}

/// Samples drawn from `old`; `new` is `old` with perturbed parameters so
/// some ratios leave the clip range.
fn tiny_problem(seed: u64, perturb: f64) -> (GaussianPolicy, GaussianPolicy, Data) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let old = tiny_policy(&mut rng);
    let n = 24;
    let obs: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut u = Vec::new();
    let mut logp = Vec::new();
    for o in &obs {
        let (s, _, lp) = old.sample(o, &mut rng).unwrap();
        u.push(s);
        logp.push(lp);
    }
    let adv = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    let mut new = old.clone();
    if perturb > 0.0 {
        for p in new.mean.params_mut() {
            *p += rng.random_range(-perturb..perturb);
        }
        new.log_std += 0.05;
    }
    (old, new, Data { obs, u, old: logp, adv })
}

fn loss(p: &GaussianPolicy, data: &Data) -> f64 {
    policy_objective(p, &data.samples(), 0.2, 0.003, None).unwrap().loss
}

#[test]
fn clipped_surrogate_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let (_, policy, data) = tiny_problem(seed, 0.15);
        let mut g = vec![0.0; policy.mean.param_count()];
        let mut g_ls = 0.0;
        policy_objective(&policy, &data.samples(), 0.2, 0.003, Some((&mut g, &mut g_ls))).unwrap();

        let h = 1e-6;
        let mut fd = Vec::new();
        for i in 0..policy.mean.param_count() {
            let mut plus = policy.clone();
            plus.mean.params_mut()[i] += h;
            let mut minus = policy.clone();
            minus.mean.params_mut()[i] -= h;
            fd.push((loss(&plus, &data) - loss(&minus, &data)) / (2.0 * h));
        }
        let mut plus = policy.clone();
        plus.log_std += h;
        let mut minus = policy.clone();
        minus.log_std -= h;
        fd.push((loss(&plus, &data) - loss(&minus, &data)) / (2.0 * h));
        g.push(g_ls);

        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(norm > 1e-3, "degenerate test problem");
        assert!(diff <= 1e-4 * norm, "seed {seed}: relative gradient error {}", diff / norm);
    }
}

#[test]
fn identical_policies_give_unit_ratio() {
    let (old, _, data) = tiny_problem(3, 0.0);
    let t = policy_objective(&old, &data.samples(), 0.2, 0.0, None).unwrap();
    let mean_adv = data.adv.iter().sum::<f64>() / data.adv.len() as f64;
    assert!((t.loss + mean_adv).abs() < 1e-12);
    assert_eq!(t.clip_fraction, 0.0);
    assert!(t.approx_kl.abs() < 1e-12);
}

#[test]
fn zero_advantages_leave_only_entropy_gradient() {
    let (_, policy, mut data) = tiny_problem(4, 0.1);
    data.adv.iter_mut().for_each(|a| *a = 0.0);
    let mut g = vec![0.0; policy.mean.param_count()];
    let mut g_ls = 0.0;
    policy_objective(&policy, &data.samples(), 0.2, 0.01, Some((&mut g, &mut g_ls))).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));
    assert!((g_ls + 0.01).abs() < 1e-15);
}

#[test]
fn clipped_samples_contribute_no_gradient() {
    let (_, policy, data) = tiny_problem(5, 0.6);
    let (mut active, mut inactive) = (0, 0);
    for k in 0..data.obs.len() {
        let one = Data {
            obs: vec![data.obs[k].clone()],
            u: vec![data.u[k]],
            old: vec![data.old[k]],
            adv: vec![data.adv[k]],
        };
        let mut g = vec![0.0; policy.mean.param_count()];
        let mut g_ls = 0.0;
        policy_objective(&policy, &one.samples(), 0.2, 0.0, Some((&mut g, &mut g_ls))).unwrap();
        let z = policy.pre_action(&data.obs[k]).unwrap();
        let ratio = (log_prob(data.u[k], z, policy.log_std) - data.old[k]).exp();
        let zero = g.iter().all(|&x| x == 0.0) && g_ls == 0.0;
        if surrogate_active(ratio, data.adv[k], 0.2) {
            active += 1;
            assert!(!zero, "sample {k}: active sample has no gradient");
        } else {
            inactive += 1;
            assert!((ratio - 1.0).abs() > 0.2);
            assert!(zero, "sample {k}: clipped sample leaked gradient");
        }
    }
    assert!(active > 0 && inactive > 0, "test problem should exercise both branches");
}

fn cfg_small(episode_length: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.env.roughness = 0.0;
    cfg.env.episode_length = episode_length;
    cfg.train.num_envs = 3;
    cfg.train.horizon = 12;
    cfg.train.hidden = vec![8, 8];
    cfg.train.minibatch_size = 16;
    cfg
}

fn workers(cfg: &ScenarioConfig, seed: u64) -> Vec<Worker> {
    let shared = Arc::new(cfg.clone());
    let robot = Arc::new(cfg.robot().unwrap());
    (0..cfg.train.num_envs).map(|i| Worker::new(Env::with_robot(shared.clone(), robot.clone()), seed, i).unwrap()).collect()
}

fn zero_policy() -> GaussianPolicy {
    GaussianPolicy { mean: Mlp::zeros(&[OBS_LEN, 8, 1], Activation::Elu, Activation::Identity).unwrap(), log_std: -1.0 }
}

#[test]
fn deterministic_zero_policy_records_zero_actions() {
    let mut cfg = cfg_small(10.0);
    cfg.train.num_envs = 1;
    let mut ws = workers(&cfg, 1);
    let value = Mlp::zeros(&[OBS_LEN, 8, 1], Activation::Elu, Activation::Identity).unwrap();
    let b = collect_rollouts(&mut ws, &zero_policy(), &value, 4, Sampling::Deterministic).unwrap();
    assert_eq!(b.len(), 4);
    assert_eq!(b.actions, vec![0.0; 4]);
    assert_eq!(b.observations.len(), 4);
}

#[test]
fn observation_after_done_comes_from_reset() {
    let cfg = cfg_small(0.1);
    let mut ws = workers(&cfg, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let policy = GaussianPolicy::new(&[OBS_LEN, 8, 1], 0.5, &mut rng).unwrap();
    let value = value_net(&[OBS_LEN, 8, 1], &mut rng).unwrap();
    let b = collect_rollouts(&mut ws, &policy, &value, 12, Sampling::Stochastic).unwrap();
    let n = b.num_envs;
    let mut checked = 0;
    for t in 0..b.horizon - 1 {
        for i in 0..n {
            let next = &b.observations[(t + 1) * n + i];
            let fresh = next[..FRAME_LEN] == next[FRAME_LEN..2 * FRAME_LEN] && next[0] == 0.0;
            if b.dones[t * n + i] {
                assert!(fresh, "env {i} step {t}: post-done observation is not a reset");
                checked += 1;
            } else {
                assert!(!fresh || t == 0, "env {i} step {t}: unexpected reset");
            }
        }
    }
    assert!(checked >= n * 2);
}

fn collect(cfg: &ScenarioConfig, seed: u64, threads: usize) -> RolloutBatch {
    let mut ws = workers(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = GaussianPolicy::new(&[OBS_LEN, 8, 8, 1], 0.3, &mut rng).unwrap();
    let value = value_net(&[OBS_LEN, 8, 8, 1], &mut rng).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| collect_rollouts(&mut ws, &policy, &value, cfg.train.horizon, Sampling::Stochastic)).unwrap()
}

#[test]
fn rollouts_are_reproducible_across_thread_counts() {
    let cfg = cfg_small(0.2);
    let a = collect(&cfg, 5, 1);
    let b = collect(&cfg, 5, 4);
    assert_eq!(a, b);
    assert_ne!(collect(&cfg, 6, 2).pre_actions, a.pre_actions);
}

#[test]
fn update_with_unchanged_batch_is_deterministic() {
    let cfg = cfg_small(0.2);
    let batch = collect(&cfg, 8, 2);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut policy = GaussianPolicy::new(&[OBS_LEN, 8, 8, 1], 0.3, &mut rng).unwrap();
        let mut value = value_net(&[OBS_LEN, 8, 8, 1], &mut rng).unwrap();
        let mut opt = Optimizers::new(&policy, &value, 1e-3);
        let stats = ppo_update(&mut policy, &mut value, &mut opt, &batch, &cfg.train, 8, 1).unwrap();
        (policy, value, stats)
    };
    let (p1, v1, s1) = run();
    let (p2, v2, s2) = run();
    assert_eq!((p1, v1, s1), (p2, v2, s2));
    assert!(s1.minibatches > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn updates_never_store_non_finite_parameters(exp in 0i32..320, seed in 0u64..50) {
        let cfg = cfg_small(0.2);
        let mut batch = collect(&cfg, seed % 4, 1);
        let scale = 10f64.powi(exp);
        batch.rewards.iter_mut().for_each(|r| *r *= scale);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = GaussianPolicy::new(&[OBS_LEN, 8, 8, 1], 0.3, &mut rng).unwrap();
        let mut value = value_net(&[OBS_LEN, 8, 8, 1], &mut rng).unwrap();
        let before = (policy.clone(), value.clone());
        let mut opt = Optimizers::new(&policy, &value, 3e-4);
        match ppo_update(&mut policy, &mut value, &mut opt, &batch, &cfg.train, seed, 1) {
            Ok(_) => {
                prop_assert!(policy.mean.is_finite() && value.is_finite() && policy.log_std.is_finite());
            }
            Err(e) => {
                prop_assert!(matches!(e, rock_core::Error::Training { iteration: 1, .. }), "{e}");
                prop_assert_eq!((policy, value), before);
            }
        }
    }
}
