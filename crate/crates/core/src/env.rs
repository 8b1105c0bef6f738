//! Reverse diffusion as an episodic decision process.
//!
//! One episode reconstructs one scene: the agent modulates every reverse
//! step and may stop early. The only non-zero reward is the composite score
//! of the decoded result, paid on the terminal step.

use crate::codec::{decode, encode, Image, Latent};
use crate::diffusion::{
    sample, timestep_embedding, ActionSource, Denoiser, NoiseSchedule, ReverseProcess, StepAction,
    TIME_EMBED_DIM,
};
use crate::error::{Error, Result};
use crate::metrics::{Reference, RewardBreakdown, RewardNormalization};
use crate::ppo::{Environment, GaussianPolicy, Transition};

/// Components of a [`StepAction`].
pub const ACTION_LEN: usize = 3;
/// Length of the condition summary `(mean, std, min, max)`.
pub const SUMMARY_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub gamma: f64,
    pub image_side: usize,
    pub latent_side: usize,
    pub seed: u64,
    pub norm: RewardNormalization,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_min: 1e-3,
            beta_max: 0.12,
            gamma: 0.99,
            image_side: 32,
            latent_side: 8,
            seed: 42,
            norm: RewardNormalization::default(),
        }
    }
}

impl EnvConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }

    pub fn observation_len(&self) -> usize {
        self.latent_side * self.latent_side + TIME_EMBED_DIM + SUMMARY_LEN
    }
}

/// Policy input: `z_t ⊕ embed(t) ⊕ summary(condition)`.
pub fn observation(z_t: &Latent, condition: &Latent) -> Vec<f64> {
    let mut features = Vec::with_capacity(z_t.len() + TIME_EMBED_DIM + SUMMARY_LEN);
    features.extend_from_slice(&z_t.values);
    features.extend(timestep_embedding(z_t.t, TIME_EMBED_DIM));
    features.extend(condition.summary());
    features
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub features: Vec<f64>,
    pub t: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
struct Scene {
    hr: Reference,
    condition: Latent,
}

#[derive(Debug, Clone)]
struct Episode {
    scene: usize,
    process: ReverseProcess,
}

/// The diffusion MDP over a fixed list of `(HR, LR)` scenes.
#[derive(Debug, Clone)]
pub struct DiffusionEnv {
    cfg: EnvConfig,
    schedule: NoiseSchedule,
    denoiser: Option<Denoiser>,
    scenes: Vec<Scene>,
    episode: Option<Episode>,
    last_score: Option<RewardBreakdown>,
    last_reconstruction: Option<Image>,
}

impl DiffusionEnv {
    pub fn new(
        cfg: EnvConfig,
        denoiser: Option<Denoiser>,
        pairs: &[(&Image, &Image)],
    ) -> Result<Self> {
        let schedule = cfg.schedule()?;
        if let Some(d) = &denoiser {
            if d.latent_side() != cfg.latent_side {
                return Err(Error::config(format!(
                    "denoiser latent side {} differs from configured {}",
                    d.latent_side(),
                    cfg.latent_side
                )));
            }
        }
        let scenes = pairs
            .iter()
            .map(|(hr, lr)| {
                if hr.height() != cfg.image_side || hr.width() != cfg.image_side {
                    return Err(Error::config(format!(
                        "HR image is {}x{}, expected side {}",
                        hr.height(),
                        hr.width(),
                        cfg.image_side
                    )));
                }
                Ok(Scene {
                    hr: Reference::new((*hr).clone())?,
                    condition: encode(lr, cfg.latent_side)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            schedule,
            denoiser,
            scenes,
            episode: None,
            last_score: None,
            last_reconstruction: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn num_scenes(&self) -> usize {
        self.scenes.len()
    }

    fn denoiser(&self) -> Result<&Denoiser> {
        self.denoiser
            .as_ref()
            .ok_or_else(|| Error::config("no trained denoiser attached to the environment"))
    }

    /// Starts an episode on scene `scene`; `z_T` is drawn from `episode_seed`.
    pub fn reset_scene(&mut self, scene: usize, episode_seed: u64) -> Result<EnvState> {
        self.denoiser()?;
        if self.scenes.is_empty() {
            return Err(Error::config("environment has no scenes"));
        }
        let s = self
            .scenes
            .get(scene)
            .ok_or_else(|| Error::invalid(format!("scene {scene} out of range")))?;
        let process = ReverseProcess::start(&self.schedule, self.cfg.latent_side, episode_seed)?;
        let state = EnvState {
            features: observation(process.latent(), &s.condition),
            t: process.latent().t,
            done: false,
        };
        self.episode = Some(Episode { scene, process });
        self.last_score = None;
        self.last_reconstruction = None;
        Ok(state)
    }

    pub fn step_action(&mut self, action: StepAction) -> Result<StepOutcome> {
        let denoiser = self.denoiser.as_ref();
        let episode = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::Protocol("step called before reset".into()))?;
        if episode.process.is_done() {
            return Err(Error::Protocol("episode already finished".into()));
        }
        let denoiser = denoiser
            .ok_or_else(|| Error::config("no trained denoiser attached to the environment"))?;
        let scene = &self.scenes[episode.scene];
        let done = episode
            .process
            .advance(denoiser, &self.schedule, &scene.condition, action)?;
        let z = episode.process.latent();
        let state = EnvState {
            features: observation(z, &scene.condition),
            t: z.t,
            done,
        };
        let mut reward = 0.0;
        if done {
            let recon = decode(z, self.cfg.image_side)?;
            let breakdown = scene.hr.score(
                &recon,
                episode.process.steps_used(),
                self.schedule.steps(),
                &self.cfg.norm,
            )?;
            reward = breakdown.composite;
            self.last_score = Some(breakdown);
            self.last_reconstruction = Some(recon);
        }
        Ok(StepOutcome {
            state,
            reward,
            done,
        })
    }

    /// Metrics of the most recently finished episode.
    pub fn last_score(&self) -> Option<&RewardBreakdown> {
        self.last_score.as_ref()
    }

    pub fn last_reconstruction(&self) -> Option<&Image> {
        self.last_reconstruction.as_ref()
    }

    /// Plain DDPM reconstruction of scene `scene` for `seed`, scored like an
    /// episode.
    pub fn baseline(&self, scene: usize, seed: u64) -> Result<(Image, RewardBreakdown)> {
        self.reconstruct(scene, seed, None)
    }

    /// Reconstructs scene `scene` with actions from `policy` (zero actions if
    /// `None`).
    pub fn reconstruct(
        &self,
        scene: usize,
        seed: u64,
        policy: Option<&mut dyn ActionSource>,
    ) -> Result<(Image, RewardBreakdown)> {
        let denoiser = self.denoiser()?;
        let s = self
            .scenes
            .get(scene)
            .ok_or_else(|| Error::invalid(format!("scene {scene} out of range")))?;
        let (z, steps_used) = sample(&s.condition, denoiser, &self.schedule, policy, seed)?;
        let recon = decode(&z, self.cfg.image_side)?;
        let breakdown =
            s.hr.score(&recon, steps_used, self.schedule.steps(), &self.cfg.norm)?;
        Ok((recon, breakdown))
    }
}

/// Episodes visit scenes round-robin: episode `k` uses scene `k mod n`.
impl Environment for DiffusionEnv {
    fn observation_len(&self) -> usize {
        self.cfg.observation_len()
    }

    fn action_len(&self) -> usize {
        ACTION_LEN
    }

    fn reset(&mut self, episode: usize, seed: u64) -> Result<Vec<f64>> {
        if self.scenes.is_empty() {
            return Err(Error::config("environment has no scenes"));
        }
        let scene = episode % self.scenes.len();
        Ok(self.reset_scene(scene, seed)?.features)
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let out = self.step_action(StepAction::from_slice(action)?)?;
        Ok(Transition {
            observation: out.state.features,
            reward: out.reward,
            done: out.done,
        })
    }
}

/// Drives sampling with the policy's squashed mean action.
#[derive(Debug, Clone, Copy)]
pub struct PolicyActor<'a> {
    pub policy: &'a GaussianPolicy,
}

impl ActionSource for PolicyActor<'_> {
    fn action(&mut self, z_t: &Latent, condition: &Latent) -> Result<StepAction> {
        StepAction::from_slice(
            &self
                .policy
                .deterministic_action(&observation(z_t, condition))?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::{rollout, ValueNet};
    use crate::rng::seeded;
    use crate::scenes::{degrade, generate_scene, SceneCategory};

    fn pairs(n: usize) -> Vec<(Image, Image)> {
        (0..n)
            .map(|i| {
                let hr = generate_scene(SceneCategory::ALL[i % 8], i as u64, 32).unwrap();
                let lr = degrade(&hr, 4, 0.02, i as u64).unwrap();
                (hr, lr)
            })
            .collect()
    }

    fn env_with(n: usize, with_denoiser: bool) -> DiffusionEnv {
        let data = pairs(n);
        let refs: Vec<(&Image, &Image)> = data.iter().map(|(h, l)| (h, l)).collect();
        let denoiser = with_denoiser.then(|| Denoiser::new(8, &[16], &mut seeded(1)).unwrap());
        DiffusionEnv::new(EnvConfig::default(), denoiser, &refs).unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_shaped() {
        let mut env = env_with(2, true);
        let a = env.reset_scene(1, 77).unwrap();
        let b = env.reset_scene(1, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.t, 50);
        assert_eq!(a.features.len(), 64 + 8 + 4);
        assert_eq!(env.observation_len(), 76);
    }

    #[test]
    fn zero_actions_match_baseline() {
        let mut env = env_with(2, true);
        for seed in [3, 4] {
            env.reset_scene(0, seed).unwrap();
            let mut rewards = Vec::new();
            loop {
                let out = env.step_action(StepAction::default()).unwrap();
                rewards.push(out.reward);
                if out.done {
                    break;
                }
            }
            assert_eq!(rewards.len(), 50);
            assert!(rewards[..49].iter().all(|r| *r == 0.0));
            let (img, base) = env.baseline(0, seed).unwrap();
            assert_eq!(rewards[49], base.composite);
            assert_eq!(env.last_reconstruction().unwrap(), &img);
        }
    }

    #[test]
    fn immediate_stop_scores_efficiency() {
        let mut env = env_with(1, true);
        env.reset_scene(0, 5).unwrap();
        let out = env.step_action(StepAction::new(0.0, 0.0, 1.0)).unwrap();
        assert!(out.done);
        assert_eq!(out.state.t, 0);
        let s = env.last_score().unwrap();
        assert!((s.efficiency - (1.0 - 1.0 / 50.0)).abs() < 1e-15);
        assert_eq!(out.reward, s.composite);
    }

    #[test]
    fn stepping_finished_episode_is_protocol_error() {
        let mut env = env_with(1, true);
        assert!(matches!(
            env.step_action(StepAction::default()),
            Err(Error::Protocol(_))
        ));
        env.reset_scene(0, 5).unwrap();
        env.step_action(StepAction::new(0.0, 0.0, 1.0)).unwrap();
        assert!(matches!(
            env.step_action(StepAction::default()),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn missing_denoiser_or_scenes_is_config_error() {
        let mut env = env_with(1, false);
        assert!(matches!(env.reset_scene(0, 1), Err(Error::Config(_))));
        let mut empty = DiffusionEnv::new(EnvConfig::default(), None, &[]).unwrap();
        assert!(matches!(
            Environment::reset(&mut empty, 0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rollouts_are_bounded_and_reproducible() {
        let mut env = env_with(3, true);
        let mut rng = seeded(2);
        let policy = GaussianPolicy::new(76, &[16], 3, 0.0, &mut rng).unwrap();
        let value = ValueNet::new(76, &[16], &mut rng).unwrap();
        assert!(rollout(&mut env, &policy, &value, 0, 0, 1)
            .unwrap()
            .is_empty());
        let a = rollout(&mut env, &policy, &value, 0, 6, 9).unwrap();
        let b = rollout(&mut env, &policy, &value, 0, 6, 9).unwrap();
        assert_eq!(a, b);
        for traj in &a {
            assert!((1..=50).contains(&traj.len()));
            let dones: Vec<bool> = traj.steps.iter().map(|s| s.done).collect();
            assert_eq!(dones.iter().filter(|d| **d).count(), 1);
            assert!(*dones.last().unwrap());
            let terminal = traj.steps.last().unwrap().reward;
            assert_eq!(traj.total_reward(), terminal);
        }
    }

    #[test]
    fn policy_actor_drives_sampling() {
        let env = env_with(1, true);
        let mut policy = GaussianPolicy::new(76, &[8], 3, 0.0, &mut seeded(3)).unwrap();
        // bias the stop gate positive: every episode ends after one step
        let last_bias = policy.mean_net.params().len() - 1;
        policy.mean_net.params_mut().entry_mut(last_bias).data_mut()[2] = 5.0;
        let mut actor = PolicyActor { policy: &policy };
        let (_, s) = env.reconstruct(0, 1, Some(&mut actor)).unwrap();
        assert!((s.efficiency - 0.98).abs() < 1e-12);
    }
}
