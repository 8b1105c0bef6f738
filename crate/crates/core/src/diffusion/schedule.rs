use crate::codec::Latent;
use crate::error::{Error, Result};

/// Linear beta schedule with derived `alpha` and cumulative `alpha_bar`.
///
/// Timesteps are 1-based: `beta(t)` for `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let span = (steps - 1) as f64;
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / span)
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// Closed-form `z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) noise`.
pub fn forward_noise(
    z0: &Latent,
    t: usize,
    noise: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Latent> {
    schedule.check_timestep(t)?;
    if noise.len() != z0.len() {
        return Err(Error::invalid(format!(
            "noise length {} does not match latent length {}",
            noise.len(),
            z0.len()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (signal, spread) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = z0
        .values
        .iter()
        .zip(noise)
        .map(|(z, e)| signal * z + spread * e)
        .collect();
    Latent::new(z0.side, values, t)
}

/// One Markov step `z_t = sqrt(alpha_t) z_{t-1} + sqrt(beta_t) noise`.
pub fn forward_step(z_prev: &Latent, noise: &[f64], schedule: &NoiseSchedule) -> Result<Latent> {
    let t = z_prev.t + 1;
    schedule.check_timestep(t)?;
    if noise.len() != z_prev.len() {
        return Err(Error::invalid("noise length does not match latent length"));
    }
    let (a, b) = (schedule.alpha(t).sqrt(), schedule.beta(t).sqrt());
    let values = z_prev
        .values
        .iter()
        .zip(noise)
        .map(|(z, e)| a * z + b * e)
        .collect();
    Latent::new(z_prev.side, values, t)
}
