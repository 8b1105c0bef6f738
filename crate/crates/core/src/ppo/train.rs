use super::policy::{GaussianPolicy, ValueNet};
use super::rollout::{run_episode, Environment, Trajectory, POLICY_STREAM};
use super::update::{ppo_update, Batch, Optimizers};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

const INIT_STREAM: u64 = 0x494E_4954;
const UPDATE_STREAM: u64 = 0x5550_4454;
const EPISODE_STREAM: u64 = 0x4550_4953;

/// Epochs averaged by the trailing reward smoother.
pub const REWARD_SMOOTHING_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub update_epochs: usize,
    pub batch_size: usize,
    /// Minimum environment steps collected per epoch; episodes are never cut.
    pub steps_per_epoch: usize,
    pub train_epochs: usize,
    pub hidden: Vec<usize>,
    pub initial_log_std: f64,
    /// Initial pre-squash action mean; empty means zero.
    pub initial_mean: Vec<f64>,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            update_epochs: 4,
            batch_size: 64,
            steps_per_epoch: 1000,
            train_epochs: 200,
            hidden: vec![64, 64],
            initial_log_std: -0.5,
            initial_mean: Vec::new(),
            seed: 42,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.clip];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config(
                "learning rate and clip range must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("gamma and GAE lambda must lie in [0, 1]"));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return Err(Error::config("loss coefficients must be non-negative"));
        }
        if self.update_epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::config(
                "update epochs, batch size and steps per epoch must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    /// Mean undiscounted episode return in this epoch.
    pub mean_reward: f64,
    /// Trailing mean of `mean_reward` over the last ten epochs.
    pub smoothed_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub episodes: usize,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: GaussianPolicy,
    pub value: ValueNet,
    pub curve: Vec<CurvePoint>,
}

/// Trains freshly initialized networks; see [`train_with`].
pub fn train<E: Environment + ?Sized>(env: &mut E, cfg: &PpoConfig) -> Result<TrainOutcome> {
    train_with(env, cfg, &mut |_| {})
}

/// Runs `train_epochs` collect-then-update epochs, reporting each finished
/// epoch to `observer`.
///
/// Network initialization, episode seeds, action noise and minibatch
/// shuffling each draw from their own stream derived from `cfg.seed`.
pub fn train_with<E: Environment + ?Sized>(
    env: &mut E,
    cfg: &PpoConfig,
    observer: &mut dyn FnMut(&CurvePoint),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut init_rng = seeded(derive_seed(cfg.seed, INIT_STREAM));
    let mut policy = GaussianPolicy::new(
        env.observation_len(),
        &cfg.hidden,
        env.action_len(),
        cfg.initial_log_std,
        &mut init_rng,
    )?;
    if !cfg.initial_mean.is_empty() {
        policy.set_mean_bias(&cfg.initial_mean)?;
    }
    let mut value = ValueNet::new(env.observation_len(), &cfg.hidden, &mut init_rng)?;
    let mut optimizers = Optimizers::new(&policy, &value, cfg.learning_rate)?;

    let mut policy_rng = seeded(derive_seed(cfg.seed, POLICY_STREAM));
    let mut update_rng = seeded(derive_seed(cfg.seed, UPDATE_STREAM));
    let episode_base = derive_seed(cfg.seed, EPISODE_STREAM);

    let mut curve: Vec<CurvePoint> = Vec::with_capacity(cfg.train_epochs);
    let mut episode = 0usize;
    for epoch in 0..cfg.train_epochs {
        let mut trajectories: Vec<Trajectory> = Vec::new();
        let mut steps = 0usize;
        while steps < cfg.steps_per_epoch {
            let traj = run_episode(
                env,
                &policy,
                &value,
                episode,
                derive_seed(episode_base, episode as u64),
                &mut policy_rng,
            )?;
            episode += 1;
            steps += traj.len();
            trajectories.push(traj);
        }
        let mean_reward = trajectories
            .iter()
            .map(Trajectory::total_reward)
            .sum::<f64>()
            / trajectories.len() as f64;

        let batch = Batch::from_trajectories(&trajectories, cfg.gamma, cfg.gae_lambda)?;
        let stats = ppo_update(
            &mut policy,
            &mut value,
            &mut optimizers,
            &batch,
            cfg,
            &mut update_rng,
        )?;
        if !policy.mean_net.params().all_finite() || !value.net.params().all_finite() {
            return Err(Error::invalid(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }

        let window_start = curve.len().saturating_sub(REWARD_SMOOTHING_WINDOW - 1);
        let window = &curve[window_start..];
        let smoothed_reward = (window.iter().map(|p| p.mean_reward).sum::<f64>() + mean_reward)
            / (window.len() + 1) as f64;
        let point = CurvePoint {
            epoch,
            mean_reward,
            smoothed_reward,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            clip_fraction: stats.clip_fraction,
            episodes: trajectories.len(),
            steps,
        };
        observer(&point);
        curve.push(point);
    }
    Ok(TrainOutcome {
        policy,
        value,
        curve,
    })
}
