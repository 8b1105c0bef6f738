//! Proximal policy optimization for continuous actions.
//!
//! A diagonal Gaussian policy with a tanh squash, a separate value network,
//! generalized advantage estimation and the clipped surrogate objective.

mod bandit;
mod gae;
mod policy;
mod rollout;
mod train;
mod update;

pub use bandit::QuadraticBandit;
pub use gae::gae;
pub use policy::{
    gaussian_log_prob, load_agent, save_agent, GaussianPolicy, PolicySample, ValueNet, LOG_STD_MAX,
    LOG_STD_MIN,
};
pub use rollout::{rollout, Environment, StepRecord, Trajectory, Transition};
pub use train::{train, train_with, CurvePoint, PpoConfig, TrainOutcome, REWARD_SMOOTHING_WINDOW};
pub use update::{clipped_surrogate, ppo_update, Batch, LossStats, Optimizers};
