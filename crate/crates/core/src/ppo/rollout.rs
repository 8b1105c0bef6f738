use rand::Rng;

use super::policy::{GaussianPolicy, ValueNet};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Episodic environment with continuous actions in `[-1, 1]^n`.
pub trait Environment {
    fn observation_len(&self) -> usize;
    fn action_len(&self) -> usize;
    /// Starts episode number `episode`; `seed` drives the environment's own noise.
    fn reset(&mut self, episode: usize, seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<Transition>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub features: Vec<f64>,
    /// Pre-squash draw, needed to re-evaluate its log-probability.
    pub raw_action: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Hard cap on episode length guarding against environments that never end.
const MAX_EPISODE_STEPS: usize = 100_000;

pub(crate) fn run_episode<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &mut E,
    policy: &GaussianPolicy,
    value: &ValueNet,
    episode: usize,
    env_seed: u64,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut features = env.reset(episode, env_seed)?;
    let mut traj = Trajectory::default();
    loop {
        let draw = policy.sample(&features, rng)?;
        let v = value.value(&features)?;
        let next = env.step(&draw.action)?;
        traj.steps.push(StepRecord {
            features,
            raw_action: draw.raw,
            action: draw.action,
            log_prob: draw.log_prob,
            value: v,
            reward: next.reward,
            done: next.done,
        });
        if next.done {
            return Ok(traj);
        }
        if traj.steps.len() >= MAX_EPISODE_STEPS {
            return Err(Error::Protocol(
                "episode exceeded the step cap without terminating".into(),
            ));
        }
        features = next.observation;
    }
}

/// Stream tag for the policy's sampling noise.
pub(crate) const POLICY_STREAM: u64 = 0x504F_4C49_4359;

/// Runs `n_episodes` episodes numbered from `first_episode`. Episode `k` uses
/// environment seed `derive_seed(seed, k)`; action noise comes from one
/// stream seeded from `seed`.
pub fn rollout<E: Environment + ?Sized>(
    env: &mut E,
    policy: &GaussianPolicy,
    value: &ValueNet,
    first_episode: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut rng = seeded(derive_seed(seed, POLICY_STREAM));
    (first_episode..first_episode + n_episodes)
        .map(|k| run_episode(env, policy, value, k, derive_seed(seed, k as u64), &mut rng))
        .collect()
}
