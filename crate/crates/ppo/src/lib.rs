//! Proximal policy optimization for the rolling-robot policy.
//!
//! Rollouts run in parallel, one environment per worker with its own random
//! stream, so results do not depend on the thread count. Updates are
//! single-threaded over the gathered batch.

pub mod gae;
pub mod optim;
pub mod policy;
pub mod rollout;
pub mod train;
pub mod update;

pub use gae::{gae, normalize};
pub use policy::GaussianPolicy;
pub use rollout::{collect_rollouts, RolloutBatch, Sampling, Worker};
pub use train::{evaluate_speed, train, TrainOutput};
pub use update::{ppo_update, UpdateStats};
