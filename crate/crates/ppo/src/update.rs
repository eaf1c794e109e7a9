use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rock_core::config::TrainConfig;
use rock_core::nn::Mlp;
use rock_core::{Error, Result};

use crate::gae::normalize;
use crate::optim::{clip_grad_norm, Adam};
use crate::policy::{entropy, log_prob, GaussianPolicy, LOG_STD_RANGE};
use crate::rollout::RolloutBatch;

/// One transition as seen by the policy loss.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample<'a> {
    pub obs: &'a [f64],
    /// Pre-squash action that was taken.
    pub pre_action: f64,
    pub old_log_prob: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PolicyTerms {
    /// `-mean(min(r A, clip(r) A)) - entropy_coef * H`.
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    /// Mean of `(r - 1) - ln r`, a non-negative KL estimate.
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Whether the clipped surrogate passes gradient for this sample: it does
/// not when the ratio has left the trust region in the direction the
/// advantage pushes it.
pub fn surrogate_active(ratio: f64, advantage: f64, clip: f64) -> bool {
    !((advantage > 0.0 && ratio > 1.0 + clip) || (advantage < 0.0 && ratio < 1.0 - clip))
}

/// Clipped-surrogate loss with entropy bonus. When `grads` is given,
/// accumulates the gradient with respect to the mean network parameters and
/// the log standard deviation.
pub fn policy_objective(
    policy: &GaussianPolicy,
    samples: &[PolicySample],
    clip: f64,
    entropy_coef: f64,
    mut grads: Option<(&mut [f64], &mut f64)>,
) -> Result<PolicyTerms> {
    let n = samples.len() as f64;
    let ls = policy.log_std;
    let var = (2.0 * ls).exp();
    let mut terms = PolicyTerms::default();
    for s in samples {
        let trace = policy.mean.trace(s.obs)?;
        let z = trace.output()[0];
        let logp = log_prob(s.pre_action, z, ls);
        let ratio = (logp - s.old_log_prob).exp();
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        terms.surrogate += (ratio * s.advantage).min(clipped * s.advantage) / n;
        terms.approx_kl += ((ratio - 1.0) - (logp - s.old_log_prob)) / n;
        if (ratio - 1.0).abs() > clip {
            terms.clip_fraction += 1.0 / n;
        }
        if let Some((g_net, g_ls)) = grads.as_mut() {
            if surrogate_active(ratio, s.advantage, clip) {
                // d(loss)/d(logp) for this sample.
                let coef = -ratio * s.advantage / n;
                let diff = s.pre_action - z;
                policy.mean.backward(&trace, &[coef * diff / var], g_net);
                **g_ls += coef * (diff * diff / var - 1.0);
            }
        }
    }
    terms.entropy = entropy(ls);
    terms.loss = -terms.surrogate - entropy_coef * terms.entropy;
    if let Some((_, g_ls)) = grads {
        *g_ls -= entropy_coef;
    }
    Ok(terms)
}

/// `value_coef * mean((V - R)^2) / 2`, accumulating its gradient if asked.
pub fn value_objective(
    value: &Mlp,
    obs: &[&[f64]],
    returns: &[f64],
    value_coef: f64,
    mut grads: Option<&mut [f64]>,
) -> Result<f64> {
    let n = obs.len() as f64;
    let mut loss = 0.0;
    for (o, &r) in obs.iter().zip(returns) {
        let trace = value.trace(o)?;
        let err = trace.output()[0] - r;
        loss += 0.5 * value_coef * err * err / n;
        if let Some(g) = grads.as_mut() {
            value.backward(&trace, &[value_coef * err / n], g);
        }
    }
    Ok(loss)
}

/// Optimizer state carried across iterations.
#[derive(Debug, Clone)]
pub struct Optimizers {
    policy: Adam,
    log_std: Adam,
    value: Adam,
}

impl Optimizers {
    pub fn new(policy: &GaussianPolicy, value: &Mlp, learning_rate: f64) -> Self {
        Self {
            policy: Adam::new(policy.mean.param_count(), learning_rate),
            log_std: Adam::new(1, learning_rate),
            value: Adam::new(value.param_count(), learning_rate),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Runs `cfg.epochs` passes of minibatch PPO over `batch`. On a non-finite
/// loss, gradient or parameter the networks are restored and an error names
/// the iteration.
pub fn ppo_update(
    policy: &mut GaussianPolicy,
    value: &mut Mlp,
    opt: &mut Optimizers,
    batch: &RolloutBatch,
    cfg: &TrainConfig,
    seed: u64,
    iteration: usize,
) -> Result<UpdateStats> {
    let fail = |what: String| Error::Training { iteration, what };
    if !batch.is_finite() {
        return Err(fail("batch contains non-finite values".into()));
    }
    let (mut adv, returns) = batch.advantages(cfg.gamma, cfg.gae_lambda)?;
    normalize(&mut adv, &batch.valid);
    let mut indices: Vec<usize> = (0..batch.len()).filter(|&k| batch.valid[k]).collect();
    if indices.is_empty() {
        return Ok(UpdateStats::default());
    }

    let backup = (policy.clone(), value.clone(), opt.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (iteration as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut stats = UpdateStats::default();
    let result = (|| {
        for _ in 0..cfg.epochs {
            indices.shuffle(&mut rng);
            for chunk in indices.chunks(cfg.minibatch_size) {
                let samples: Vec<PolicySample> = chunk
                    .iter()
                    .map(|&k| PolicySample {
                        obs: &batch.observations[k],
                        pre_action: batch.pre_actions[k],
                        old_log_prob: batch.log_probs[k],
                        advantage: adv[k],
                    })
                    .collect();
                let mut g_net = vec![0.0; policy.mean.param_count()];
                let mut g_ls = 0.0;
                let terms =
                    policy_objective(policy, &samples, cfg.clip_ratio, cfg.entropy_coef, Some((&mut g_net, &mut g_ls)))?;

                let obs: Vec<&[f64]> = chunk.iter().map(|&k| &batch.observations[k][..]).collect();
                let rets: Vec<f64> = chunk.iter().map(|&k| returns[k]).collect();
                let mut g_value = vec![0.0; value.param_count()];
                let v_loss = value_objective(value, &obs, &rets, cfg.value_coef, Some(&mut g_value))?;

                let finite = terms.loss.is_finite()
                    && v_loss.is_finite()
                    && g_ls.is_finite()
                    && g_net.iter().chain(&g_value).all(|g| g.is_finite());
                if !finite {
                    return Err(fail("non-finite loss or gradient".into()));
                }
                let mut g_ls_buf = [g_ls];
                clip_grad_norm(&mut [&mut g_net, &mut g_ls_buf], cfg.max_grad_norm);
                clip_grad_norm(&mut [&mut g_value], cfg.max_grad_norm);
                opt.policy.step(policy.mean.params_mut(), &g_net);
                let mut ls = [policy.log_std];
                opt.log_std.step(&mut ls, &g_ls_buf);
                policy.log_std = ls[0].clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1);
                opt.value.step(value.params_mut(), &g_value);

                stats.policy_loss += terms.loss;
                stats.value_loss += v_loss;
                stats.entropy += terms.entropy;
                stats.approx_kl += terms.approx_kl;
                stats.clip_fraction += terms.clip_fraction;
                stats.minibatches += 1;
            }
        }
        if !(policy.mean.is_finite() && value.is_finite() && policy.log_std.is_finite()) {
            return Err(fail("update produced non-finite parameters".into()));
        }
        Ok(())
    })();
    if let Err(e) = result {
        (*policy, *value, *opt) = backup;
        return Err(e);
    }
    let m = stats.minibatches.max(1) as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.approx_kl /= m;
    stats.clip_fraction /= m;
    Ok(stats)
}
