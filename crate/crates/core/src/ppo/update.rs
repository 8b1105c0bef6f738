use rand::seq::SliceRandom;
use rand::Rng;

use super::gae::gae;
use super::policy::{GaussianPolicy, ValueNet};
use super::rollout::Trajectory;
use super::train::PpoConfig;
use crate::error::{Error, Result};
use crate::nn::AdamState;

/// `min(r A, clamp(r, 1 - clip, 1 + clip) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Flattened rollout samples with their advantage targets.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub features: Vec<Vec<f64>>,
    pub raw_actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    /// Runs GAE per trajectory; every trajectory must end in a terminal step.
    pub fn from_trajectories(trajectories: &[Trajectory], gamma: f64, lambda: f64) -> Result<Self> {
        let mut batch = Batch::default();
        for traj in trajectories {
            match traj.steps.last() {
                Some(last) if last.done => {}
                _ => return Err(Error::invalid("trajectory does not end in a terminal step")),
            }
            let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
            let mut values: Vec<f64> = traj.steps.iter().map(|s| s.value).collect();
            values.push(0.0);
            let (adv, ret) = gae(&rewards, &values, gamma, lambda)?;
            for (step, (a, r)) in traj.steps.iter().zip(adv.into_iter().zip(ret)) {
                batch.features.push(step.features.clone());
                batch.raw_actions.push(step.raw_action.clone());
                batch.old_log_probs.push(step.log_prob);
                batch.advantages.push(a);
                batch.returns.push(r);
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Adam states for the policy mean network, its log-std vector and the
/// value network.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub mean: AdamState,
    pub log_std: AdamState,
    pub value: AdamState,
}

impl Optimizers {
    pub fn new(policy: &GaussianPolicy, value: &ValueNet, learning_rate: f64) -> Result<Self> {
        Ok(Self {
            mean: AdamState::new(policy.mean_net.params(), learning_rate),
            log_std: AdamState::new(&policy.log_std_params()?, learning_rate),
            value: AdamState::new(value.net.params(), learning_rate),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    /// Mean of `-surrogate` over all minibatch samples.
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Share of samples whose ratio lay outside `[1 - clip, 1 + clip]`.
    pub clip_fraction: f64,
    pub entropy: f64,
    /// Extremes of the per-minibatch mean ratio seen during the cycle.
    pub min_minibatch_ratio: f64,
    pub max_minibatch_ratio: f64,
    pub minibatches: usize,
}

/// One PPO update cycle: `update_epochs` passes over shuffled minibatches,
/// one Adam step per minibatch for the policy and the value network.
///
/// Advantages are normalized to zero mean and unit variance over the batch.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    value: &mut ValueNet,
    optimizers: &mut Optimizers,
    batch: &Batch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<LossStats> {
    if batch.is_empty() {
        return Err(Error::invalid("PPO update needs a non-empty batch"));
    }
    if cfg.batch_size == 0 || cfg.clip <= 0.0 {
        return Err(Error::invalid("batch size and clip range must be positive"));
    }
    let n = batch.len();
    let mean_adv = batch.advantages.iter().sum::<f64>() / n as f64;
    let std_adv = (batch
        .advantages
        .iter()
        .map(|a| (a - mean_adv).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let advantages: Vec<f64> = batch
        .advantages
        .iter()
        .map(|a| (a - mean_adv) / (std_adv + 1e-8))
        .collect();

    let action_len = policy.action_len();
    let mut mean_grads = policy.mean_net.params().zeros_like();
    let mut log_std_grads = policy.log_std_params()?.zeros_like();
    let mut value_grads = value.net.params().zeros_like();
    let mut indices: Vec<usize> = (0..n).collect();

    let mut stats = LossStats {
        min_minibatch_ratio: f64::INFINITY,
        max_minibatch_ratio: f64::NEG_INFINITY,
        ..LossStats::default()
    };
    let mut samples_seen = 0usize;
    let mut clipped = 0usize;

    for _ in 0..cfg.update_epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let m = chunk.len() as f64;
            mean_grads.fill_zero();
            log_std_grads.fill_zero();
            value_grads.fill_zero();
            let stds: Vec<f64> = policy.log_std.iter().map(|ls| ls.exp()).collect();
            let mut ratio_sum = 0.0;

            for &i in chunk {
                let features = &batch.features[i];
                let raw = &batch.raw_actions[i];
                let adv = advantages[i];

                let cache = policy.mean_net.forward_cached(features)?;
                let mean = cache.output();
                let log_prob = super::policy::gaussian_log_prob(mean, &policy.log_std, raw);
                let ratio = (log_prob - batch.old_log_probs[i]).exp();
                ratio_sum += ratio;
                if (ratio - 1.0).abs() > cfg.clip {
                    clipped += 1;
                }
                stats.policy_loss -= clipped_surrogate(ratio, adv, cfg.clip);

                // d(-surrogate)/d(log_prob); zero where the clamp is the active branch
                let clip_active =
                    (adv > 0.0 && ratio > 1.0 + cfg.clip) || (adv < 0.0 && ratio < 1.0 - cfg.clip);
                let dlogp = if clip_active { 0.0 } else { -adv * ratio / m };
                if dlogp != 0.0 {
                    let mut mean_out_grad = vec![0.0; action_len];
                    let ls_grad = log_std_grads.entry_mut(0).data_mut();
                    for d in 0..action_len {
                        let z = (raw[d] - mean[d]) / stds[d];
                        mean_out_grad[d] = dlogp * z / stds[d];
                        ls_grad[d] += dlogp * (z * z - 1.0);
                    }
                    policy
                        .mean_net
                        .backward_accumulate(&cache, &mean_out_grad, &mut mean_grads)?;
                }

                let vcache = value.net.forward_cached(features)?;
                let err = vcache.output()[0] - batch.returns[i];
                stats.value_loss += err * err;
                value.net.backward_accumulate(
                    &vcache,
                    &[2.0 * cfg.value_coef * err / m],
                    &mut value_grads,
                )?;
            }
            // entropy bonus: d(-c * H)/d(log_std_d) = -c
            for g in log_std_grads.entry_mut(0).data_mut() {
                *g -= cfg.entropy_coef;
            }

            let batch_ratio = ratio_sum / m;
            stats.min_minibatch_ratio = stats.min_minibatch_ratio.min(batch_ratio);
            stats.max_minibatch_ratio = stats.max_minibatch_ratio.max(batch_ratio);
            stats.entropy += policy.entropy() * m;
            samples_seen += chunk.len();
            stats.minibatches += 1;

            optimizers
                .mean
                .step(policy.mean_net.params_mut(), &mean_grads)?;
            let mut ls = policy.log_std_params()?;
            optimizers.log_std.step(&mut ls, &log_std_grads)?;
            policy.log_std.copy_from_slice(ls.entry(0).data());
            policy.clamp_log_std();
            optimizers
                .value
                .step(value.net.params_mut(), &value_grads)?;
        }
    }

    let total = samples_seen.max(1) as f64;
    stats.policy_loss /= total;
    stats.value_loss /= total;
    stats.entropy /= total;
    stats.clip_fraction = clipped as f64 / total;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate(1.0, 2.0, 0.2), 2.0);
        assert!((clipped_surrogate(1.5, 2.0, 0.2) - 2.4).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) - -0.8).abs() < 1e-12);
    }

    #[test]
    fn unit_ratio_returns_advantage() {
        for a in [-3.0, -0.1, 0.0, 0.7, 12.0] {
            for c in [0.05, 0.2, 0.9] {
                assert_eq!(clipped_surrogate(1.0, a, c), a);
            }
        }
    }

    use crate::ppo::{rollout, QuadraticBandit};
    use crate::rng::seeded;

    fn bandit_batch(policy: &GaussianPolicy, value: &ValueNet, n: usize) -> Batch {
        let mut env = QuadraticBandit::new(0.7);
        let trajs = rollout(&mut env, policy, value, 0, n, 11).unwrap();
        Batch::from_trajectories(&trajs, 0.99, 0.95).unwrap()
    }

    fn agent() -> (GaussianPolicy, ValueNet) {
        let mut rng = seeded(5);
        let p = GaussianPolicy::new(1, &[8], 1, -0.5, &mut rng).unwrap();
        let v = ValueNet::new(1, &[8], &mut rng).unwrap();
        (p, v)
    }

    #[test]
    fn zero_advantages_leave_mean_net_unchanged() {
        let (mut p, mut v) = agent();
        let mut batch = bandit_batch(&p, &v, 32);
        batch.advantages.iter_mut().for_each(|a| *a = 0.0);
        let before = p.clone();
        let mut opt = Optimizers::new(&p, &v, 1e-3).unwrap();
        let cfg = PpoConfig::default();
        ppo_update(&mut p, &mut v, &mut opt, &batch, &cfg, &mut seeded(1)).unwrap();
        assert_eq!(p.mean_net, before.mean_net);
        // only the entropy term moves log_std, upward
        assert!(p.log_std[0] > before.log_std[0]);
    }

    #[test]
    fn unit_ratio_first_pass_has_no_clipping() {
        let (mut p, mut v) = agent();
        let batch = bandit_batch(&p, &v, 40);
        let mut opt = Optimizers::new(&p, &v, 1e-3).unwrap();
        let cfg = PpoConfig {
            update_epochs: 1,
            batch_size: 40,
            ..PpoConfig::default()
        };
        let stats = ppo_update(&mut p, &mut v, &mut opt, &batch, &cfg, &mut seeded(1)).unwrap();
        assert_eq!(stats.clip_fraction, 0.0);
        assert!((stats.min_minibatch_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let (mut p, mut v) = agent();
        let mut opt = Optimizers::new(&p, &v, 1e-3).unwrap();
        let r = ppo_update(
            &mut p,
            &mut v,
            &mut opt,
            &Batch::default(),
            &PpoConfig::default(),
            &mut seeded(1),
        );
        assert!(r.is_err());
    }

    #[test]
    fn minibatch_ratios_stay_near_one() {
        for seed in 0..5 {
            let mut rng = seeded(seed);
            let mut p = GaussianPolicy::new(1, &[16], 1, -0.5, &mut rng).unwrap();
            let mut v = ValueNet::new(1, &[16], &mut rng).unwrap();
            let batch = bandit_batch(&p, &v, 256);
            let mut opt = Optimizers::new(&p, &v, 3e-4).unwrap();
            let cfg = PpoConfig::default();
            let s = ppo_update(&mut p, &mut v, &mut opt, &batch, &cfg, &mut seeded(seed)).unwrap();
            assert!(s.min_minibatch_ratio >= 1.0 - 2.0 * cfg.clip, "{s:?}");
            assert!(s.max_minibatch_ratio <= 1.0 + 2.0 * cfg.clip, "{s:?}");
        }
    }

    #[test]
    fn unterminated_trajectory_rejected() {
        let (p, v) = agent();
        let mut trajs = rollout(&mut QuadraticBandit::new(0.7), &p, &v, 0, 2, 3).unwrap();
        trajs[1].steps[0].done = false;
        assert!(Batch::from_trajectories(&trajs, 0.99, 0.95).is_err());
    }
}
