use std::path::Path;

use rand::Rng;

use super::schedule::{forward_noise, NoiseSchedule};
use crate::codec::{encode, Image, Latent};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Activation, AdamState, Mlp, NetParams, OutputActivation, RealArray};
use crate::rng::{normal_vec, seeded};

/// Width of the sinusoidal timestep embedding.
pub const TIME_EMBED_DIM: usize = 8;

/// Base of the geometric frequency ladder; chosen so the slowest frequency
/// still varies across a 50-step schedule.
const EMBED_BASE: f64 = 1000.0;

/// `[sin(t w_0), .., sin(t w_{k-1}), cos(t w_0), .., cos(t w_{k-1})]` with
/// `w_i = EMBED_BASE^(-i/k)`, `k = dim / 2`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| EMBED_BASE.powf(-(i as f64) / half as f64))
        .collect();
    let t = t as f64;
    freqs
        .iter()
        .map(|w| (t * w).sin())
        .chain(freqs.iter().map(|w| (t * w).cos()))
        .collect()
}

/// Anything that predicts the injected noise from `(z_t, t, condition)`.
pub trait NoisePredictor {
    fn predict_noise(&self, z_t: &[f64], t: usize, condition: &[f64]) -> Result<Vec<f64>>;
}

/// Preconditioning around the condition latent, treated as the prior mean
/// of `z_0` with per-entry residual variance `v`.
///
/// The noise estimate is `k_t (z_t - sqrt(abar_t) c) + s_t net(..)`, where
/// `k_t = sqrt(1 - abar_t) / (abar_t v + 1 - abar_t)` is the least-squares
/// linear gain and `s_t = sqrt(abar_t v / (abar_t v + 1 - abar_t))` is the
/// standard deviation of what that gain leaves unexplained.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSkip {
    alpha_bars: Vec<f64>,
    residual_var: f64,
}

impl ConditionSkip {
    pub fn new(schedule: &NoiseSchedule, residual_var: f64) -> Result<Self> {
        Self::from_parts(schedule.alpha_bars().to_vec(), residual_var)
    }

    fn from_parts(alpha_bars: Vec<f64>, residual_var: f64) -> Result<Self> {
        if !(residual_var.is_finite() && residual_var > 0.0) {
            return Err(Error::invalid(format!(
                "residual variance {residual_var} must be positive"
            )));
        }
        if alpha_bars.is_empty() || alpha_bars.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::invalid("skip needs cumulative alphas in (0, 1)"));
        }
        Ok(Self {
            alpha_bars,
            residual_var,
        })
    }

    /// Fits `v` as the mean squared entry of `z_0 - c`, floored at `1e-6`.
    pub fn fit(schedule: &NoiseSchedule, pairs: &[(Latent, Latent)]) -> Result<Self> {
        let (sum, count) = pairs.iter().fold((0.0, 0usize), |(s, n), (z0, c)| {
            let d: f64 = z0
                .values
                .iter()
                .zip(&c.values)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            (s + d, n + z0.len())
        });
        if count == 0 {
            return Err(Error::invalid("cannot fit a skip on no data"));
        }
        Self::new(schedule, (sum / count as f64).max(1e-6))
    }

    pub fn residual_var(&self) -> f64 {
        self.residual_var
    }

    pub fn gain(&self, t: usize) -> Result<f64> {
        let ab = *self.alpha_bars.get(t.wrapping_sub(1)).ok_or_else(|| {
            Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.alpha_bars.len()
            ))
        })?;
        Ok((1.0 - ab).sqrt() / (ab * self.residual_var + 1.0 - ab))
    }

    /// Scale applied to the network output at step `t`.
    pub fn output_scale(&self, t: usize) -> Result<f64> {
        self.gain(t)?;
        let av = self.alpha_bars[t - 1] * self.residual_var;
        Ok((av / (av + 1.0 - self.alpha_bars[t - 1])).sqrt())
    }

    pub fn estimate(&self, z_t: &[f64], t: usize, condition: &[f64]) -> Result<Vec<f64>> {
        let k = self.gain(t)?;
        let sqrt_ab = self.alpha_bars[t - 1].sqrt();
        Ok(z_t
            .iter()
            .zip(condition)
            .map(|(z, c)| k * (z - sqrt_ab * c))
            .collect())
    }
}

/// ε-prediction network over `z_t ⊕ embed(t) ⊕ condition`, optionally added
/// to a [`ConditionSkip`].
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    net: Mlp,
    latent_side: usize,
    skip: Option<ConditionSkip>,
}

const SKIP_ALPHA_BARS: &str = "skip.alpha_bars";
const SKIP_RESIDUAL_VAR: &str = "skip.residual_var";

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(latent_side: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let n = latent_side * latent_side;
        let mut sizes = vec![2 * n + TIME_EMBED_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(n);
        Ok(Self {
            net: Mlp::new(&sizes, Activation::Tanh, OutputActivation::None, rng)?,
            latent_side,
            skip: None,
        })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        let n = net.output_size();
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n || net.input_size() != 2 * n + TIME_EMBED_DIM {
            return Err(Error::config(format!(
                "network shape {:?} is not a denoiser layout",
                net.layer_sizes()
            )));
        }
        Ok(Self {
            net,
            latent_side: side,
            skip: None,
        })
    }

    pub fn with_skip(mut self, skip: ConditionSkip) -> Self {
        self.skip = Some(skip);
        self
    }

    pub fn skip(&self) -> Option<&ConditionSkip> {
        self.skip.as_ref()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn latent_side(&self) -> usize {
        self.latent_side
    }

    pub fn latent_len(&self) -> usize {
        self.latent_side * self.latent_side
    }

    pub fn input(&self, z_t: &[f64], t: usize, condition: &[f64]) -> Result<Vec<f64>> {
        let n = self.latent_len();
        if z_t.len() != n || condition.len() != n {
            return Err(Error::invalid(format!(
                "denoiser expects latent and condition of length {n}, got {} and {}",
                z_t.len(),
                condition.len()
            )));
        }
        let mut x = Vec::with_capacity(2 * n + TIME_EMBED_DIM);
        x.extend_from_slice(z_t);
        x.extend(timestep_embedding(t, TIME_EMBED_DIM));
        x.extend_from_slice(condition);
        Ok(x)
    }

    /// Skip estimate and network output scale; zeros and 1 without a skip.
    fn preconditioning(&self, z_t: &[f64], t: usize, condition: &[f64]) -> Result<(Vec<f64>, f64)> {
        match &self.skip {
            Some(skip) => Ok((skip.estimate(z_t, t, condition)?, skip.output_scale(t)?)),
            None => Ok((vec![0.0; z_t.len()], 1.0)),
        }
    }

    /// Network parameters plus `skip.alpha_bars` and `skip.residual_var` when
    /// a skip is attached.
    pub fn to_params(&self) -> Result<NetParams> {
        let mut params = self.net.params().clone();
        if let Some(skip) = &self.skip {
            params.push(
                SKIP_ALPHA_BARS,
                RealArray::new(vec![skip.alpha_bars.len()], skip.alpha_bars.clone())?,
            )?;
            params.push(
                SKIP_RESIDUAL_VAR,
                RealArray::new(vec![1], vec![skip.residual_var])?,
            )?;
        }
        Ok(params)
    }

    pub fn from_params(params: &NetParams) -> Result<Self> {
        let mut layers = NetParams::new();
        for (name, value) in params.iter() {
            if !name.starts_with("skip.") {
                layers.push(name.to_string(), value.clone())?;
            }
        }
        let denoiser = Self::from_net(Mlp::from_params(
            layers,
            Activation::Tanh,
            OutputActivation::None,
        )?)?;
        match (params.get(SKIP_ALPHA_BARS), params.get(SKIP_RESIDUAL_VAR)) {
            (Some(ab), Some(v)) => {
                let skip = ConditionSkip::from_parts(ab.data().to_vec(), v.data()[0])
                    .map_err(|e| Error::config(e.to_string()))?;
                Ok(denoiser.with_skip(skip))
            }
            (None, None) => Ok(denoiser),
            _ => Err(Error::config("checkpoint has an incomplete skip")),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.to_params()?, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(&checkpoint::load(path)?)
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, z_t: &[f64], t: usize, condition: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(&self.input(z_t, t, condition)?)?;
        let (skip, out_scale) = self.preconditioning(z_t, t, condition)?;
        Ok(out
            .iter()
            .zip(skip)
            .map(|(o, s)| s + out_scale * o)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub latent_side: usize,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fit and attach a [`ConditionSkip`]; the network learns the remainder.
    pub condition_skip: bool,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_side: 8,
            hidden: vec![128, 128],
            steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            condition_skip: true,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    pub denoiser: Denoiser,
    /// Mean squared noise-prediction error of every optimizer step.
    pub loss_history: Vec<f64>,
}

impl TrainedDenoiser {
    /// Trailing mean of the last `window` losses at each step.
    pub fn smoothed_losses(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.loss_history.len());
        let mut sum = 0.0;
        for (i, loss) in self.loss_history.iter().enumerate() {
            sum += loss;
            if i >= window {
                sum -= self.loss_history[i - window];
            }
            out.push(sum / (i + 1).min(window) as f64);
        }
        out
    }

    pub fn final_smoothed_loss(&self, window: usize) -> Option<f64> {
        self.smoothed_losses(window).last().copied()
    }
}

/// Fits the denoiser to predict injected noise on `(HR, LR)` pairs.
///
/// Each step draws a minibatch of pairs, a uniform timestep per sample and
/// standard-normal noise, then takes one Adam step on the mean squared error.
pub fn train_denoiser(
    pairs: &[(&Image, &Image)],
    schedule: &NoiseSchedule,
    cfg: &DenoiserConfig,
) -> Result<TrainedDenoiser> {
    if pairs.is_empty() {
        return Err(Error::invalid("denoiser training needs at least one pair"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let latents = pairs
        .iter()
        .map(|(hr, lr)| Ok((encode(hr, cfg.latent_side)?, encode(lr, cfg.latent_side)?)))
        .collect::<Result<Vec<(Latent, Latent)>>>()?;

    let mut rng = seeded(cfg.seed);
    let mut denoiser = Denoiser::new(cfg.latent_side, &cfg.hidden, &mut rng)?;
    if cfg.condition_skip {
        denoiser = denoiser.with_skip(ConditionSkip::fit(schedule, &latents)?);
        // the network starts as a zero correction to the skip
        let last = denoiser.net.params().len() - 2;
        denoiser
            .net
            .params_mut()
            .entry_mut(last)
            .data_mut()
            .fill(0.0);
    }
    let mut adam = AdamState::new(denoiser.net.params(), cfg.learning_rate);
    let mut grads = denoiser.net.params().zeros_like();
    let n = denoiser.latent_len();
    let scale = 2.0 / (cfg.batch_size * n) as f64;
    let mut loss_history = Vec::with_capacity(cfg.steps);

    for _ in 0..cfg.steps {
        grads.fill_zero();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let (z0, cond) = &latents[rng.random_range(0..latents.len())];
            let t = rng.random_range(1..=schedule.steps());
            let noise = normal_vec(&mut rng, n);
            let z_t = forward_noise(z0, t, &noise, schedule)?;
            let cache =
                denoiser
                    .net
                    .forward_cached(&denoiser.input(&z_t.values, t, &cond.values)?)?;
            let (skip, out_scale) = denoiser.preconditioning(&z_t.values, t, &cond.values)?;
            let residual: Vec<f64> = cache
                .output()
                .iter()
                .zip(&skip)
                .zip(&noise)
                .map(|((p, s), e)| s + out_scale * p - e)
                .collect();
            loss += residual.iter().map(|r| r * r).sum::<f64>();
            let out_grad: Vec<f64> = residual.iter().map(|r| scale * out_scale * r).collect();
            denoiser
                .net
                .backward_accumulate(&cache, &out_grad, &mut grads)?;
        }
        adam.step(denoiser.net.params_mut(), &grads)?;
        loss_history.push(loss / (cfg.batch_size * n) as f64);
    }
    Ok(TrainedDenoiser {
        denoiser,
        loss_history,
    })
}
