use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{checkpoint, Activation, Mlp, NetParams, OutputActivation, RealArray};

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Diagonal Gaussian over pre-squash actions; the executed action is
/// `tanh` of the draw.
///
/// Log-probabilities are those of the pre-squash draw. Old and new
/// probabilities of a stored draw share the same tanh Jacobian, so it
/// cancels in the PPO ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    /// Pre-squash draw.
    pub raw: Vec<f64>,
    /// `tanh(raw)`, in `(-1, 1)`.
    pub action: Vec<f64>,
    pub log_prob: f64,
}

/// Diagonal Gaussian log density of `raw` under `N(mean, exp(log_std)^2)`.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], raw: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(raw)
        .map(|((m, ls), u)| {
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        observation_len: usize,
        hidden: &[usize],
        action_len: usize,
        initial_log_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![observation_len];
        sizes.extend_from_slice(hidden);
        sizes.push(action_len);
        let mut mean_net = Mlp::new(&sizes, Activation::Tanh, OutputActivation::None, rng)?;
        // start near the zero action
        let last = mean_net.params().len() - 2;
        mean_net
            .params_mut()
            .entry_mut(last)
            .data_mut()
            .iter_mut()
            .for_each(|w| *w *= 0.01);
        Ok(Self {
            mean_net,
            log_std: vec![initial_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); action_len],
        })
    }

    /// Sets the output-layer bias, i.e. the pre-squash mean at zero hidden
    /// activity.
    pub fn set_mean_bias(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.action_len() {
            return Err(Error::invalid(format!(
                "mean bias has length {}, action length is {}",
                bias.len(),
                self.action_len()
            )));
        }
        let last = self.mean_net.params().len() - 1;
        self.mean_net
            .params_mut()
            .entry_mut(last)
            .data_mut()
            .copy_from_slice(bias);
        Ok(())
    }

    pub fn action_len(&self) -> usize {
        self.log_std.len()
    }

    pub fn observation_len(&self) -> usize {
        self.mean_net.input_size()
    }

    /// Pre-squash mean.
    pub fn mean(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(features)
    }

    pub fn sample<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> Result<PolicySample> {
        let mean = self.mean(features)?;
        let raw: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_prob = gaussian_log_prob(&mean, &self.log_std, &raw);
        let action = raw.iter().map(|u| u.tanh()).collect();
        Ok(PolicySample {
            raw,
            action,
            log_prob,
        })
    }

    /// Squashed mean, used for evaluation.
    pub fn deterministic_action(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mean(features)?.iter().map(|m| m.tanh()).collect())
    }

    pub fn log_prob(&self, features: &[f64], raw: &[f64]) -> Result<f64> {
        if raw.len() != self.action_len() {
            return Err(Error::invalid("action length mismatch"));
        }
        Ok(gaussian_log_prob(&self.mean(features)?, &self.log_std, raw))
    }

    /// Entropy of the pre-squash Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| ls + 0.5 * (2.0 * PI * std::f64::consts::E).ln())
            .sum()
    }

    pub fn clamp_log_std(&mut self) {
        for ls in &mut self.log_std {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn log_std_params(&self) -> Result<NetParams> {
        let mut p = NetParams::new();
        p.push(
            "log_std",
            RealArray::new(vec![self.log_std.len()], self.log_std.clone())?,
        )?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub net: Mlp,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(
        observation_len: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![observation_len];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: Mlp::new(&sizes, Activation::Tanh, OutputActivation::None, rng)?,
        })
    }

    pub fn value(&self, features: &[f64]) -> Result<f64> {
        Ok(self.net.forward(features)?[0])
    }
}

/// Writes policy and value parameters into one ORLM checkpoint under
/// `policy.*`, `policy.log_std` and `value.*`.
pub fn save_agent(policy: &GaussianPolicy, value: &ValueNet, path: &Path) -> Result<()> {
    let mut all = NetParams::new();
    all.extend_prefixed("policy", policy.mean_net.params())?;
    all.push(
        "policy.log_std",
        RealArray::new(vec![policy.log_std.len()], policy.log_std.clone())?,
    )?;
    all.extend_prefixed("value", value.net.params())?;
    checkpoint::save(&all, path)
}

pub fn load_agent(path: &Path) -> Result<(GaussianPolicy, ValueNet)> {
    let all = checkpoint::load(path)?;
    let log_std = all
        .get("policy.log_std")
        .ok_or_else(|| Error::config(format!("{} has no policy.log_std", path.display())))?
        .data()
        .to_vec();
    let mut mean_params = all.strip_prefix("policy");
    let mut layers = NetParams::new();
    for (name, value) in mean_params.iter_mut() {
        if name != "log_std" {
            layers.push(name.to_string(), value.clone())?;
        }
    }
    let mean_net = Mlp::from_params(layers, Activation::Tanh, OutputActivation::None)?;
    if mean_net.output_size() != log_std.len() {
        return Err(Error::config(
            "policy head and log_std disagree on action size",
        ));
    }
    let value_net = Mlp::from_params(
        all.strip_prefix("value"),
        Activation::Tanh,
        OutputActivation::None,
    )?;
    Ok((
        GaussianPolicy { mean_net, log_std },
        ValueNet { net: value_net },
    ))
}
