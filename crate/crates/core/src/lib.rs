//! RL-guided latent diffusion super-resolution at desk scale.
//!
//! A small conditional denoiser runs DDPM sampling in a fixed latent space of
//! synthetic grayscale scenes, and a PPO agent modulates each reverse step to
//! maximize a weighted image-quality and efficiency reward.

pub mod codec;
pub mod config;
pub mod diffusion;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod ppo;
pub mod report;
pub mod rng;
pub mod scenes;

pub use error::{Error, Result};
