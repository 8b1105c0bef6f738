use super::mlp::{ForwardCache, Mlp};
use crate::error::{Error, Result};

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-3;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Worst relative error per parameter entry, plus `"input"`.
    pub per_param: Vec<(String, f64)>,
    /// Number of scalars whose error exceeded the tolerance.
    pub violations: usize,
    pub checked: usize,
}

impl GradCheck {
    pub fn error_for(&self, name: &str) -> Option<f64> {
        self.per_param
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| *e)
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `sum(net(x))` with pre-activation `unit` of layer `layer` shifted by `dz`,
/// all else taken from `cache`. A shifted unit changes the next layer only
/// through one weight column, so only later layers are recomputed densely.
fn shifted_objective(net: &Mlp, cache: &ForwardCache, layer: usize, unit: usize, dz: f64) -> f64 {
    let sizes = net.layer_sizes();
    let layers = sizes.len() - 1;
    let act = |l: usize, v: f64| {
        if l + 1 == layers {
            net.output_activation().apply(v)
        } else {
            net.activation().apply(v)
        }
    };
    let shifted = act(layer, cache.pre_activations[layer][unit] + dz);
    if layer + 1 == layers {
        return cache.activations[layers]
            .iter()
            .enumerate()
            .map(|(o, &a)| if o == unit { shifted } else { a })
            .sum();
    }
    let da = shifted - cache.activations[layer + 1][unit];
    let mut l = layer + 1;
    let w = net.params().entry(2 * l).data();
    let mut z: Vec<f64> = cache.pre_activations[l]
        .iter()
        .enumerate()
        .map(|(o, &zo)| zo + w[o * sizes[l] + unit] * da)
        .collect();
    loop {
        let a: Vec<f64> = z.iter().map(|&v| act(l, v)).collect();
        if l + 1 == layers {
            return a.iter().sum();
        }
        l += 1;
        let w = net.params().entry(2 * l).data();
        let b = net.params().entry(2 * l + 1).data();
        z = b
            .iter()
            .enumerate()
            .map(|(o, bias)| {
                bias + w[o * sizes[l]..(o + 1) * sizes[l]]
                    .iter()
                    .zip(&a)
                    .map(|(wi, ai)| wi * ai)
                    .sum::<f64>()
            })
            .collect();
    }
}

/// `sum(net(x))` with input `k` shifted by `dx`; a full re-run.
fn input_shifted_objective(net: &Mlp, input: &[f64], k: usize, dx: f64) -> Result<f64> {
    let mut x = input.to_vec();
    x[k] += dx;
    Ok(net.forward(&x)?.iter().sum())
}

/// Checks every parameter and input gradient of `sum(net(input))` against
/// central differences with step [`FD_STEP`].
///
/// Each perturbed objective is evaluated exactly, reusing the unperturbed
/// forward pass for layers the perturbation cannot reach.
pub fn grad_check(net: &Mlp, input: &[f64], tolerance: f64) -> Result<GradCheck> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let cache = net.forward_cached(input)?;
    let cotangent = vec![1.0; net.output_size()];
    let mut grads = net.params().zeros_like();
    let input_grad = net.backward_accumulate(&cache, &cotangent, &mut grads)?;
    let sizes = net.layer_sizes();

    let mut per_param = Vec::with_capacity(grads.len() + 1);
    let mut violations = 0;
    let mut checked = 0;
    let mut max_rel_error = 0.0f64;
    let mut tally = |analytic: f64, numeric: f64, worst: &mut f64| {
        let err = rel_error(analytic, numeric);
        if err > tolerance {
            violations += 1;
        }
        *worst = worst.max(err);
        checked += 1;
    };
    for (index, (name, analytic)) in grads.iter().enumerate() {
        let layer = index / 2;
        let fan_in = sizes[layer];
        let mut worst = 0.0f64;
        for (k, &g) in analytic.data().iter().enumerate() {
            // weight [o, i] shifts unit o by h * x_i; bias o shifts it by h
            let (unit, scale) = if index % 2 == 0 {
                (k / fan_in, cache.activations[layer][k % fan_in])
            } else {
                (k, 1.0)
            };
            let plus = shifted_objective(net, &cache, layer, unit, FD_STEP * scale);
            let minus = shifted_objective(net, &cache, layer, unit, -FD_STEP * scale);
            tally(g, (plus - minus) / (2.0 * FD_STEP), &mut worst);
        }
        max_rel_error = max_rel_error.max(worst);
        per_param.push((name.to_string(), worst));
    }

    let mut worst = 0.0f64;
    for (k, &g) in input_grad.iter().enumerate() {
        let plus = input_shifted_objective(net, input, k, FD_STEP)?;
        let minus = input_shifted_objective(net, input, k, -FD_STEP)?;
        tally(g, (plus - minus) / (2.0 * FD_STEP), &mut worst);
    }
    max_rel_error = max_rel_error.max(worst);
    per_param.push(("input".to_string(), worst));

    Ok(GradCheck {
        max_rel_error,
        per_param,
        violations,
        checked,
    })
}
