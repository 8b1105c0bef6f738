use super::rollout::{Environment, Transition};
use crate::error::{Error, Result};

/// One-step, single-state bandit with reward `-(a - target)^2`.
#[derive(Debug, Clone)]
pub struct QuadraticBandit {
    pub target: f64,
}

impl QuadraticBandit {
    pub fn new(target: f64) -> Self {
        Self { target }
    }
}

impl Environment for QuadraticBandit {
    fn observation_len(&self) -> usize {
        1
    }

    fn action_len(&self) -> usize {
        1
    }

    fn reset(&mut self, _episode: usize, _seed: u64) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let &[a] = action else {
            return Err(Error::invalid("bandit takes a single action"));
        };
        Ok(Transition {
            observation: vec![1.0],
            reward: -(a - self.target).powi(2),
            done: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::{train, PpoConfig};

    #[test]
    fn ppo_solves_bandit() {
        for seed in [1, 2, 3] {
            let cfg = PpoConfig {
                steps_per_epoch: 64,
                batch_size: 16,
                learning_rate: 1e-3,
                train_epochs: 200,
                seed,
                ..PpoConfig::default()
            };
            let out = train(&mut QuadraticBandit::new(0.7), &cfg).unwrap();
            let a = out.policy.deterministic_action(&[1.0]).unwrap()[0];
            assert!((a - 0.7).abs() < 0.05, "seed {seed}: {a}");
        }
    }
}
