use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rock_core::env::Env;
use rock_core::nn::Mlp;
use rock_core::observation::Observation;
use rock_core::{Error, Result};

use crate::gae::gae;
use crate::policy::GaussianPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Stochastic,
    /// Act with the mean; log-probabilities are still recorded.
    Deterministic,
}

/// One environment with its private random stream.
#[derive(Debug, Clone)]
pub struct Worker {
    pub env: Env,
    rng: ChaCha8Rng,
    obs: Observation,
    episode_return: f64,
}

impl Worker {
    /// Worker `index` of a run seeded with `seed`; resets the env once.
    pub fn new(mut env: Env, seed: u64, index: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64 + 1);
        let obs = env.reset(rng.next_u64())?;
        Ok(Self { env, rng, obs, episode_return: 0.0 })
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    fn reset(&mut self) -> Result<()> {
        self.obs = self.env.reset(self.rng.next_u64())?;
        self.episode_return = 0.0;
        Ok(())
    }

    fn run(&mut self, policy: &GaussianPolicy, value: &Mlp, horizon: usize, sampling: Sampling) -> Result<Column> {
        let mut col = Column::default();
        for _ in 0..horizon {
            let obs = self.obs;
            let (u, action, logp) = match sampling {
                Sampling::Stochastic => policy.sample(&obs, &mut self.rng)?,
                Sampling::Deterministic => {
                    let z = policy.pre_action(&obs)?;
                    (z, z.tanh(), crate::policy::log_prob(z, z, policy.log_std))
                }
            };
            let v = value.forward(&obs)?[0];
            let step = self.env.step(action)?;
            let command = self.env.command().direction();

            col.observations.push(obs);
            col.pre_actions.push(u);
            col.actions.push(action);
            col.log_probs.push(logp);
            col.values.push(v);
            col.commands.push([command.x, command.y]);

            if step.info.diverged {
                col.rewards.push(0.0);
                col.terminal_values.push(0.0);
                col.speeds.push(0.0);
                col.dones.push(true);
                col.valid.push(false);
                col.diverged += 1;
                self.reset()?;
                continue;
            }
            col.rewards.push(step.reward);
            col.speeds.push(step.info.speed_along);
            col.dones.push(step.done);
            col.valid.push(true);
            self.episode_return += step.reward;
            if step.done {
                // Episodes end only by time limit: bootstrap from the final state.
                col.terminal_values.push(if step.info.timeout { value.forward(&step.observation)?[0] } else { 0.0 });
                col.episode_returns.push(self.episode_return);
                self.reset()?;
            } else {
                col.terminal_values.push(0.0);
                self.obs = step.observation;
            }
        }
        col.last_value = value.forward(&self.obs)?[0];
        Ok(col)
    }
}

#[derive(Debug, Default)]
struct Column {
    observations: Vec<Observation>,
    pre_actions: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    terminal_values: Vec<f64>,
    speeds: Vec<f64>,
    dones: Vec<bool>,
    valid: Vec<bool>,
    commands: Vec<[f64; 2]>,
    last_value: f64,
    diverged: usize,
    episode_returns: Vec<f64>,
}

/// Transitions from `num_envs` environments over `horizon` steps, stored
/// time-major: entry `t * num_envs + i` is step `t` of env `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub horizon: usize,
    pub num_envs: usize,
    pub observations: Vec<Observation>,
    /// Pre-squash Gaussian samples.
    pub pre_actions: Vec<f64>,
    /// Squashed actions sent to the env.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Value of the final observation of time-limited episodes, else 0.
    pub terminal_values: Vec<f64>,
    /// Ground-truth speed along the command, m/s.
    pub speeds: Vec<f64>,
    pub dones: Vec<bool>,
    /// False for transitions dropped after a divergence.
    pub valid: Vec<bool>,
    pub commands: Vec<[f64; 2]>,
    /// Value of each env's observation after the last step.
    pub last_values: Vec<f64>,
    pub diverged: usize,
    pub episode_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.horizon * self.num_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn column<T: Copy>(&self, xs: &[T], env: usize) -> Vec<T> {
        (0..self.horizon).map(|t| xs[t * self.num_envs + env]).collect()
    }

    /// Per-env GAE, returned in batch layout. Time-limited episodes are
    /// bootstrapped with `gamma * terminal_value`.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.len();
        let mut adv = vec![0.0; n];
        let mut ret = vec![0.0; n];
        for i in 0..self.num_envs {
            let rewards: Vec<f64> = (0..self.horizon)
                .map(|t| {
                    let k = t * self.num_envs + i;
                    self.rewards[k] + gamma * self.terminal_values[k]
                })
                .collect();
            let (a, r) = gae(
                &rewards,
                &self.column(&self.values, i),
                &self.column(&self.dones, i),
                self.last_values[i],
                gamma,
                lambda,
            )?;
            for t in 0..self.horizon {
                adv[t * self.num_envs + i] = a[t];
                ret[t * self.num_envs + i] = r[t];
            }
        }
        Ok((adv, ret))
    }

    fn mean_valid(&self, xs: &[f64]) -> f64 {
        let (sum, count) =
            xs.iter().zip(&self.valid).filter(|(_, &v)| v).fold((0.0, 0usize), |(s, c), (x, _)| (s + x, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn mean_reward(&self) -> f64 {
        self.mean_valid(&self.rewards)
    }

    pub fn mean_speed(&self) -> f64 {
        self.mean_valid(&self.speeds)
    }

    pub fn is_finite(&self) -> bool {
        self.observations.iter().all(|o| o.iter().all(|x| x.is_finite()))
            && [&self.pre_actions, &self.log_probs, &self.values, &self.rewards, &self.terminal_values]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Steps every worker `horizon` times in parallel.
pub fn collect_rollouts(
    workers: &mut [Worker],
    policy: &GaussianPolicy,
    value: &Mlp,
    horizon: usize,
    sampling: Sampling,
) -> Result<RolloutBatch> {
    if workers.is_empty() || horizon == 0 {
        return Err(Error::InputDomain("rollouts need at least one env and one step".into()));
    }
    let columns: Vec<Column> =
        workers.par_iter_mut().map(|w| w.run(policy, value, horizon, sampling)).collect::<Result<_>>()?;
    let n = workers.len();
    let mut b = RolloutBatch {
        horizon,
        num_envs: n,
        observations: Vec::with_capacity(horizon * n),
        pre_actions: Vec::with_capacity(horizon * n),
        actions: Vec::with_capacity(horizon * n),
        log_probs: Vec::with_capacity(horizon * n),
        values: Vec::with_capacity(horizon * n),
        rewards: Vec::with_capacity(horizon * n),
        terminal_values: Vec::with_capacity(horizon * n),
        speeds: Vec::with_capacity(horizon * n),
        dones: Vec::with_capacity(horizon * n),
        valid: Vec::with_capacity(horizon * n),
        commands: Vec::with_capacity(horizon * n),
        last_values: columns.iter().map(|c| c.last_value).collect(),
        diverged: columns.iter().map(|c| c.diverged).sum(),
        episode_returns: columns.iter().flat_map(|c| c.episode_returns.iter().copied()).collect(),
    };
    for t in 0..horizon {
        for c in &columns {
            b.observations.push(c.observations[t]);
            b.pre_actions.push(c.pre_actions[t]);
            b.actions.push(c.actions[t]);
            b.log_probs.push(c.log_probs[t]);
            b.values.push(c.values[t]);
            b.rewards.push(c.rewards[t]);
            b.terminal_values.push(c.terminal_values[t]);
            b.speeds.push(c.speeds[t]);
            b.dones.push(c.dones[t]);
            b.valid.push(c.valid[t]);
            b.commands.push(c.commands[t]);
        }
    }
    if !b.is_finite() {
        return Err(Error::Training { iteration: 0, what: "rollout batch contains non-finite values".into() });
    }
    Ok(b)
}
