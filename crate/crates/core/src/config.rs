//! Flat `key = value` run configuration covering every pipeline tunable.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::diffusion::DenoiserConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::metrics::RewardNormalization;
use crate::ppo::PpoConfig;
use crate::scenes::CorpusConfig;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "ORL_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub images_per_category: usize,
    pub image_side: usize,
    pub lr_factor: usize,
    pub lr_noise_sigma: f64,
    pub latent_side: usize,

    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,

    pub denoiser_hidden: Vec<usize>,
    pub denoiser_steps: usize,
    pub denoiser_batch_size: usize,
    pub denoiser_learning_rate: f64,
    pub condition_skip: bool,
    pub loss_smoothing_window: usize,

    pub psnr_norm_db: f64,
    pub perceptual_norm: f64,

    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub update_epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub train_epochs: usize,
    pub policy_hidden: Vec<usize>,
    pub initial_log_std: f64,
    pub initial_mean: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        let env = EnvConfig::default();
        let den = DenoiserConfig::default();
        let ppo = PpoConfig::default();
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            images_per_category: 25,
            image_side: corpus.image_side,
            lr_factor: corpus.factor,
            lr_noise_sigma: corpus.noise_sigma,
            latent_side: env.latent_side,
            diffusion_steps: env.steps,
            beta_min: env.beta_min,
            beta_max: env.beta_max,
            denoiser_hidden: den.hidden,
            denoiser_steps: den.steps,
            denoiser_batch_size: den.batch_size,
            denoiser_learning_rate: den.learning_rate,
            condition_skip: den.condition_skip,
            loss_smoothing_window: 100,
            psnr_norm_db: env.norm.psnr_db,
            perceptual_norm: env.norm.perceptual,
            learning_rate: ppo.learning_rate,
            gamma: ppo.gamma,
            gae_lambda: ppo.gae_lambda,
            clip: ppo.clip,
            value_coef: ppo.value_coef,
            entropy_coef: ppo.entropy_coef,
            update_epochs: ppo.update_epochs,
            batch_size: ppo.batch_size,
            steps_per_epoch: ppo.steps_per_epoch,
            train_epochs: ppo.train_epochs,
            policy_hidden: ppo.hidden,
            initial_log_std: ppo.initial_log_std,
            initial_mean: ppo.initial_mean,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

fn join<T: std::fmt::Debug>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Declares the key table once: parsing, echoing and key listing stay in sync.
macro_rules! run_config_keys {
    ($($key:ident : $kind:ident),* $(,)?) => {
        impl RunConfig {
            /// Every recognised key, in echo order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => run_config_keys!(@set self, $key, $kind, value),)*
                    _ => return Err(Error::config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// Effective configuration as parseable `key = value` text.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(let _ = writeln!(out, "{} = {}", stringify!($key), run_config_keys!(@show self, $key, $kind));)*
                out
            }
        }
    };
    (@set $s:ident, $key:ident, scalar, $v:ident) => { $s.$key = parse_value(stringify!($key), $v)? };
    (@set $s:ident, $key:ident, list, $v:ident) => { $s.$key = parse_list(stringify!($key), $v)? };
    (@set $s:ident, $key:ident, path, $v:ident) => { $s.$key = PathBuf::from($v) };
    (@show $s:ident, $key:ident, scalar) => { format!("{:?}", $s.$key) };
    (@show $s:ident, $key:ident, list) => { join(&$s.$key) };
    (@show $s:ident, $key:ident, path) => { $s.$key.display() };
}

run_config_keys! {
    seed: scalar,
    out_dir: path,
    images_per_category: scalar,
    image_side: scalar,
    lr_factor: scalar,
    lr_noise_sigma: scalar,
    latent_side: scalar,
    diffusion_steps: scalar,
    beta_min: scalar,
    beta_max: scalar,
    denoiser_hidden: list,
    denoiser_steps: scalar,
    denoiser_batch_size: scalar,
    denoiser_learning_rate: scalar,
    condition_skip: scalar,
    loss_smoothing_window: scalar,
    psnr_norm_db: scalar,
    perceptual_norm: scalar,
    learning_rate: scalar,
    gamma: scalar,
    gae_lambda: scalar,
    clip: scalar,
    value_coef: scalar,
    entropy_coef: scalar,
    update_epochs: scalar,
    batch_size: scalar,
    steps_per_epoch: scalar,
    train_epochs: scalar,
    policy_hidden: list,
    initial_log_std: scalar,
    initial_mean: list,
}

impl RunConfig {
    /// Applies `key = value` lines over the defaults. `#` starts a comment;
    /// blank lines are skipped; unknown or repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("line {}: `{key}` set twice", i + 1)));
            }
            self.set(key, value.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Seed precedence: config file < `ORL_SEED` < explicit flag.
    pub fn override_seed(&mut self, env_value: Option<&str>, flag: Option<u64>) -> Result<()> {
        if let Some(v) = env_value {
            self.seed = v.trim().parse().map_err(|_| {
                Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?;
        }
        if let Some(seed) = flag {
            self.seed = seed;
        }
        Ok(())
    }

    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig {
            image_side: self.image_side,
            factor: self.lr_factor,
            noise_sigma: self.lr_noise_sigma,
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            steps: self.diffusion_steps,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
            gamma: self.gamma,
            image_side: self.image_side,
            latent_side: self.latent_side,
            seed: self.seed,
            norm: RewardNormalization {
                psnr_db: self.psnr_norm_db,
                perceptual: self.perceptual_norm,
            },
        }
    }

    pub fn denoiser(&self) -> DenoiserConfig {
        DenoiserConfig {
            latent_side: self.latent_side,
            hidden: self.denoiser_hidden.clone(),
            steps: self.denoiser_steps,
            batch_size: self.denoiser_batch_size,
            learning_rate: self.denoiser_learning_rate,
            condition_skip: self.condition_skip,
            seed: self.seed,
        }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            learning_rate: self.learning_rate,
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip: self.clip,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            update_epochs: self.update_epochs,
            batch_size: self.batch_size,
            steps_per_epoch: self.steps_per_epoch,
            train_epochs: self.train_epochs,
            hidden: self.policy_hidden.clone(),
            initial_log_std: self.initial_log_std,
            initial_mean: self.initial_mean.clone(),
            seed: self.seed,
        }
    }
}
