use rand::Rng;
use rand_distr::StandardNormal;
use rock_core::nn::{policy_net, Activation, Mlp};
use rock_core::Result;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Bounds on the learnable log standard deviation.
pub const LOG_STD_RANGE: (f64, f64) = (-5.0, 1.0);

/// Tanh-squashed Gaussian policy.
///
/// The network's pre-squash output `z` is the Gaussian mean; a sample
/// `u ~ N(z, sigma^2)` gives the action `tanh(u)`, and the deterministic action
/// is `tanh(z)`. Log-probabilities are taken in `u` space: the squashing
/// Jacobian depends only on `u` and cancels in probability ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    /// Same weights as the exported policy, identity output.
    pub mean: Mlp,
    pub log_std: f64,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], action_std: f64, rng: &mut R) -> Result<Self> {
        let mean = policy_net(widths, rng)?.with_output_activation(Activation::Identity);
        Ok(Self { mean, log_std: action_std.ln().clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1) })
    }

    /// Wraps an exported tanh policy for further training.
    pub fn from_export(net: Mlp, action_std: f64) -> Self {
        Self { mean: net.with_output_activation(Activation::Identity), log_std: action_std.ln() }
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    pub fn pre_action(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.mean.forward(obs)?[0])
    }

    pub fn deterministic_action(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.pre_action(obs)?.tanh())
    }

    /// Draws `(u, action, log_prob(u))`.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(f64, f64, f64)> {
        let z = self.pre_action(obs)?;
        let eps: f64 = rng.sample(StandardNormal);
        let u = z + self.std() * eps;
        Ok((u, u.tanh(), log_prob(u, z, self.log_std)))
    }

    /// The exported network: tanh output, deterministic action.
    pub fn export(&self) -> Mlp {
        self.mean.clone().with_output_activation(Activation::Tanh)
    }

    /// Differential entropy of the pre-squash Gaussian.
    pub fn entropy(&self) -> f64 {
        entropy(self.log_std)
    }
}

pub fn log_prob(u: f64, mean: f64, log_std: f64) -> f64 {
    let k = (u - mean) * (-log_std).exp();
    -0.5 * k * k - log_std - 0.5 * LN_2PI
}

pub fn entropy(log_std: f64) -> f64 {
    log_std + 0.5 * (1.0 + LN_2PI)
}
