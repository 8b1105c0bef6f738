use super::denoiser::NoisePredictor;
use super::schedule::NoiseSchedule;
use crate::codec::Latent;
use crate::error::{Error, Result};
use crate::rng::{normal_vec, seeded, SeededRng};

/// Gain applied to the mean-shift and log-scale action components.
pub const MODULATION_GAIN: f64 = 0.5;

/// Per-step modulation of the reverse process. The all-zero action
/// reproduces plain DDPM sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepAction {
    pub mean_shift: f64,
    pub log_scale: f64,
    /// A positive value ends sampling with a direct `z_0` estimate.
    pub stop_gate: f64,
}

impl StepAction {
    pub fn new(mean_shift: f64, log_scale: f64, stop_gate: f64) -> Self {
        Self {
            mean_shift,
            log_scale,
            stop_gate,
        }
    }

    /// Reads `[mean_shift, log_scale, stop_gate]`.
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        match values {
            &[m, l, s] => Ok(Self::new(m, l, s)),
            _ => Err(Error::invalid(format!(
                "action needs 3 components, got {}",
                values.len()
            ))),
        }
    }

    /// Components clamped into `[-1, 1]`.
    pub fn bounded(self) -> Self {
        Self {
            mean_shift: self.mean_shift.clamp(-1.0, 1.0),
            log_scale: self.log_scale.clamp(-1.0, 1.0),
            stop_gate: self.stop_gate.clamp(-1.0, 1.0),
        }
    }

    pub fn stops(&self) -> bool {
        self.stop_gate > 0.0
    }
}

/// One modulated DDPM step `z_t -> z_{t-1}`.
///
/// `z_{t-1} = mu + k*shift*sigma + exp(k*log_scale)*sigma*xi` with
/// `mu = (z_t - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t)` and
/// `sigma = sqrt(beta_t)`. The noise term is omitted at `t == 1`.
pub fn reverse_step<P: NoisePredictor + ?Sized>(
    z_t: &Latent,
    predictor: &P,
    schedule: &NoiseSchedule,
    condition: &Latent,
    action: StepAction,
    xi: &[f64],
) -> Result<Latent> {
    let t = z_t.t;
    schedule.check_timestep(t)?;
    if xi.len() != z_t.len() {
        return Err(Error::invalid(format!(
            "xi length {} does not match latent length {}",
            xi.len(),
            z_t.len()
        )));
    }
    let action = action.bounded();
    let eps = predictor.predict_noise(&z_t.values, t, &condition.values)?;
    let beta = schedule.beta(t);
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let eps_coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let sigma = beta.sqrt();
    let shift = MODULATION_GAIN * action.mean_shift * sigma;
    let noise_scale = (MODULATION_GAIN * action.log_scale).exp() * sigma;
    let values = z_t
        .values
        .iter()
        .zip(&eps)
        .zip(xi)
        .map(|((z, e), x)| {
            let mu = (z - eps_coef * e) * inv_sqrt_alpha;
            if t == 1 {
                mu + shift
            } else {
                mu + shift + noise_scale * x
            }
        })
        .collect();
    Latent::new(z_t.side, values, t - 1)
}

/// Direct estimate `z_0 = (z_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t)`.
pub fn predict_x0<P: NoisePredictor + ?Sized>(
    z_t: &Latent,
    predictor: &P,
    schedule: &NoiseSchedule,
    condition: &Latent,
) -> Result<Latent> {
    let t = z_t.t;
    schedule.check_timestep(t)?;
    let eps = predictor.predict_noise(&z_t.values, t, &condition.values)?;
    let ab = schedule.alpha_bar(t);
    let (signal, spread) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = z_t
        .values
        .iter()
        .zip(&eps)
        .map(|(z, e)| (z - spread * e) / signal)
        .collect();
    Latent::new(z_t.side, values, 0)
}

/// Supplies the action for each reverse step.
pub trait ActionSource {
    fn action(&mut self, z_t: &Latent, condition: &Latent) -> Result<StepAction>;
}

/// Reverse diffusion driven one step at a time.
///
/// Starts from seeded standard-normal `z_T` and draws one `xi` per step from
/// the same stream (none on the final `t == 1` step), so two processes built
/// from the same seed see identical noise regardless of who picks the actions.
#[derive(Debug, Clone)]
pub struct ReverseProcess {
    z: Latent,
    rng: SeededRng,
    steps_used: usize,
    done: bool,
}

impl ReverseProcess {
    pub fn start(schedule: &NoiseSchedule, latent_side: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let z = Latent::new(
            latent_side,
            normal_vec(&mut rng, latent_side * latent_side),
            schedule.steps(),
        )?;
        Ok(Self {
            z,
            rng,
            steps_used: 0,
            done: false,
        })
    }

    pub fn latent(&self) -> &Latent {
        &self.z
    }

    pub fn steps_used(&self) -> usize {
        self.steps_used
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Applies one action; returns whether the process has finished.
    pub fn advance<P: NoisePredictor + ?Sized>(
        &mut self,
        predictor: &P,
        schedule: &NoiseSchedule,
        condition: &Latent,
        action: StepAction,
    ) -> Result<bool> {
        if self.done {
            return Err(Error::Protocol("reverse process already finished".into()));
        }
        let action = action.bounded();
        self.z = if action.stops() {
            self.done = true;
            predict_x0(&self.z, predictor, schedule, condition)?
        } else {
            let xi = if self.z.t > 1 {
                normal_vec(&mut self.rng, self.z.len())
            } else {
                vec![0.0; self.z.len()]
            };
            reverse_step(&self.z, predictor, schedule, condition, action, &xi)?
        };
        self.steps_used += 1;
        if self.z.t == 0 {
            self.done = true;
        }
        Ok(self.done)
    }

    pub fn into_result(self) -> (Latent, usize) {
        (self.z, self.steps_used)
    }
}

/// Runs the reverse process to completion. Without a policy every action is
/// zero, i.e. plain DDPM sampling for `T` steps.
pub fn sample<P: NoisePredictor + ?Sized>(
    condition: &Latent,
    predictor: &P,
    schedule: &NoiseSchedule,
    mut policy: Option<&mut dyn ActionSource>,
    seed: u64,
) -> Result<(Latent, usize)> {
    let mut process = ReverseProcess::start(schedule, condition.side, seed)?;
    while !process.is_done() {
        let action = match policy.as_deref_mut() {
            Some(p) => p.action(process.latent(), condition)?,
            None => StepAction::default(),
        };
        process.advance(predictor, schedule, condition, action)?;
    }
    Ok(process.into_result())
}
