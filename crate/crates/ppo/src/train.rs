use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rock_core::checkpoint::{save_policy, write_sidecar};
use rock_core::config::ScenarioConfig;
use rock_core::env::Env;
use rock_core::nn::{policy_action, value_net, Mlp};
use rock_core::observation::OBS_LEN;
use rock_core::{Error, Result};

use crate::policy::GaussianPolicy;
use crate::rollout::{collect_rollouts, Sampling, Worker};
use crate::update::{ppo_update, Optimizers};

pub const CURVE_HEADER: &str =
    "iteration,mean_reward,mean_speed,approx_kl,policy_loss,value_loss,entropy,clip_fraction,action_std,diverged";

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    pub mean_reward: f64,
    /// Mean ground-truth speed along the command over the rollout, m/s.
    pub mean_speed: f64,
    pub approx_kl: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub action_std: f64,
    pub diverged: usize,
}

impl CurveRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.mean_reward,
            self.mean_speed,
            self.approx_kl,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.clip_fraction,
            self.action_std,
            self.diverged
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Final exported policy (`ROCKPOL1`).
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub rows: Vec<CurveRow>,
    pub policy: GaussianPolicy,
    pub value: Mlp,
}

pub fn policy_widths(hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![OBS_LEN];
    w.extend_from_slice(hidden);
    w.push(1);
    w
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))
}

/// Trains a policy from scratch. Writes `policy.bin` (+ `.meta`), `value.bin`,
/// `learning_curve.csv` and periodic `checkpoints/policy_NNNN.bin` under
/// `out_dir`. `config_text` is hashed into the checkpoint sidecar.
pub fn train(cfg: &ScenarioConfig, config_text: &str, seed: u64, out_dir: &Path) -> Result<TrainOutput> {
    cfg.validate()?;
    let t = &cfg.train;
    let widths = policy_widths(&t.hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = GaussianPolicy::new(&widths, t.action_std, &mut rng)?;
    let mut value = value_net(&widths, &mut rng)?;
    let mut opt = Optimizers::new(&policy, &value, t.learning_rate);

    let shared = Arc::new(cfg.clone());
    let robot = Arc::new(cfg.robot()?);
    let curve_path = out_dir.join("learning_curve.csv");
    let checkpoint = out_dir.join("policy.bin");
    let written = |iteration: usize, what: &str, e: std::io::Error| Error::Training {
        iteration,
        what: format!("{what}: {e}; partial results (curve, checkpoints) remain in {}", out_dir.display()),
    };
    fs::create_dir_all(out_dir).map_err(|e| written(0, "cannot create output directory", e))?;
    let mut curve = File::create(&curve_path).map_err(|e| written(0, "cannot create learning curve", e))?;
    writeln!(curve, "{CURVE_HEADER}").map_err(|e| written(0, "cannot write learning curve", e))?;

    let mut rows = Vec::new();
    if t.iterations > 0 {
        let workers: Vec<Worker> = (0..t.num_envs)
            .map(|i| Worker::new(Env::with_robot(shared.clone(), robot.clone()), seed, i))
            .collect::<Result<_>>()?;
        let mut workers = workers;
        let pool = pool(t.threads)?;
        for iteration in 1..=t.iterations {
            let batch = pool.install(|| collect_rollouts(&mut workers, &policy, &value, t.horizon, Sampling::Stochastic))?;
            let stats = ppo_update(&mut policy, &mut value, &mut opt, &batch, t, seed, iteration)?;
            let row = CurveRow {
                iteration,
                mean_reward: batch.mean_reward(),
                mean_speed: batch.mean_speed(),
                approx_kl: stats.approx_kl,
                policy_loss: stats.policy_loss,
                value_loss: stats.value_loss,
                entropy: stats.entropy,
                clip_fraction: stats.clip_fraction,
                action_std: policy.std(),
                diverged: batch.diverged,
            };
            writeln!(curve, "{}", row.to_csv()).map_err(|e| written(iteration, "cannot write learning curve", e))?;
            rows.push(row);
            if t.checkpoint_every > 0 && iteration % t.checkpoint_every == 0 && iteration < t.iterations {
                let path = out_dir.join("checkpoints").join(format!("policy_{iteration:04}.bin"));
                save_policy(&policy.export(), &path).map_err(|e| Error::Training {
                    iteration,
                    what: format!("cannot write {}: {e}", path.display()),
                })?;
            }
        }
    }
    curve.flush().map_err(|e| written(t.iterations, "cannot flush learning curve", e))?;

    let save = |net: &Mlp, path: &Path| {
        save_policy(net, path).map_err(|e| Error::Training {
            iteration: t.iterations,
            what: format!("cannot write {}: {e}", path.display()),
        })
    };
    save(&policy.export(), &checkpoint)?;
    save(&value, &out_dir.join("value.bin"))?;
    write_sidecar(
        &checkpoint,
        config_text,
        &[
            ("seed", seed.to_string()),
            ("iterations", t.iterations.to_string()),
            ("action_std", policy.std().to_string()),
        ],
    )?;
    Ok(TrainOutput { checkpoint, curve: curve_path, rows, policy, value })
}

/// Mean speed along the command of a deterministic policy over one episode
/// per seed (episodes run in parallel; the result does not depend on the
/// thread count).
pub fn evaluate_speed(policy: &Mlp, cfg: &ScenarioConfig, seeds: &[u64]) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::InputDomain("evaluation needs at least one seed".into()));
    }
    let shared = Arc::new(cfg.clone());
    let robot = Arc::new(cfg.robot()?);
    let per_seed: Vec<f64> = seeds
        .par_iter()
        .map(|&seed| {
            let mut env = Env::with_robot(shared.clone(), robot.clone());
            let mut obs = env.reset(seed)?;
            let (mut sum, mut count) = (0.0, 0usize);
            loop {
                let step = env.step(policy_action(policy, &obs)?)?;
                if step.info.diverged {
                    break;
                }
                sum += step.info.speed_along;
                count += 1;
                obs = step.observation;
                if step.done {
                    break;
                }
            }
            Ok(if count > 0 { sum / count as f64 } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.iter().sum::<f64>() / seeds.len() as f64)
}
