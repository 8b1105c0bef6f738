//! Conditional latent diffusion: noise schedule, ε-prediction denoiser and
//! the reverse sampler with per-step action hooks.

mod denoiser;
mod sampler;
mod schedule;

pub use denoiser::{
    timestep_embedding, train_denoiser, ConditionSkip, Denoiser, DenoiserConfig, NoisePredictor,
    TrainedDenoiser, TIME_EMBED_DIM,
};
pub use sampler::{
    predict_x0, reverse_step, sample, ActionSource, ReverseProcess, StepAction, MODULATION_GAIN,
};
pub use schedule::{forward_noise, forward_step, NoiseSchedule};
