use rand::Rng;

use super::array::{NetParams, RealArray};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    None,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl OutputActivation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            OutputActivation::None => x,
            OutputActivation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, a: f64) -> f64 {
        match self {
            OutputActivation::None => 1.0,
            OutputActivation::Tanh => 1.0 - a * a,
        }
    }
}

/// Fully connected feed-forward network.
///
/// Parameters are stored as `layers.{i}.weight` (shape `[out, in]`) followed
/// by `layers.{i}.bias` (shape `[out]`) for each layer in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    params: NetParams,
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_activation: OutputActivation,
}

/// Per-layer activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[L]` the output.
    pub(crate) activations: Vec<Vec<f64>>,
    pub(crate) pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut params = NetParams::new();
        for (i, pair) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            params.push(
                format!("layers.{i}.weight"),
                RealArray::new(vec![fan_out, fan_in], weights)?,
            )?;
            params.push(format!("layers.{i}.bias"), RealArray::zeros(vec![fan_out]))?;
        }
        Ok(Self {
            params,
            layer_sizes: layer_sizes.to_vec(),
            activation,
            output_activation,
        })
    }

    /// Rebuilds a network from stored parameters, inferring layer sizes from
    /// the weight shapes.
    pub fn from_params(
        params: NetParams,
        activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if params.is_empty() || !params.len().is_multiple_of(2) {
            return Err(Error::invalid(
                "network parameters must come in weight/bias pairs",
            ));
        }
        let mut sizes = Vec::new();
        for layer in 0..params.len() / 2 {
            let w = params
                .get(&format!("layers.{layer}.weight"))
                .ok_or_else(|| Error::invalid(format!("missing layers.{layer}.weight")))?;
            let b = params
                .get(&format!("layers.{layer}.bias"))
                .ok_or_else(|| Error::invalid(format!("missing layers.{layer}.bias")))?;
            let &[out, inp] = w.shape() else {
                return Err(Error::invalid(format!("layer {layer} weight is not 2-D")));
            };
            if b.shape() != [out] {
                return Err(Error::invalid(format!("layer {layer} bias shape mismatch")));
            }
            if layer == 0 {
                sizes.push(inp);
            } else if sizes[layer] != inp {
                return Err(Error::invalid(format!("layer {layer} input size mismatch")));
            }
            sizes.push(out);
        }
        // Canonical ordering: weight then bias per layer.
        let mut ordered = NetParams::new();
        for layer in 0..sizes.len() - 1 {
            for kind in ["weight", "bias"] {
                let name = format!("layers.{layer}.{kind}");
                ordered.push(
                    name.clone(),
                    params.get(&name).cloned().expect("checked above"),
                )?;
            }
        }
        Ok(Self {
            params: ordered,
            layer_sizes: sizes,
            activation,
            output_activation,
        })
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetParams {
        &mut self.params
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::invalid(format!(
                "network expects {} inputs, got {}",
                self.input_size(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .forward_cached(input)?
            .activations
            .pop()
            .expect("non-empty"))
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let layers = self.num_layers();
        let mut activations = Vec::with_capacity(layers + 1);
        let mut pre_activations = Vec::with_capacity(layers);
        activations.push(input.to_vec());
        for layer in 0..layers {
            let w = self.params.entry(2 * layer).data();
            let b = self.params.entry(2 * layer + 1).data();
            let fan_in = self.layer_sizes[layer];
            let prev = &activations[layer];
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bias)| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    bias + row.iter().zip(prev).map(|(wi, xi)| wi * xi).sum::<f64>()
                })
                .collect();
            let a = if layer + 1 == layers {
                z.iter().map(|&v| self.output_activation.apply(v)).collect()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
        })
    }

    /// Gradients of `dot(output, output_grad)` with respect to every parameter
    /// and the input.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(NetParams, Vec<f64>)> {
        let cache = self.forward_cached(input)?;
        let mut grads = self.params.zeros_like();
        let input_grad = self.backward_accumulate(&cache, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Adds parameter gradients for one sample into `grads` and returns the
    /// input gradient.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut NetParams,
    ) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_size() {
            return Err(Error::invalid(format!(
                "output gradient has length {}, network output is {}",
                output_grad.len(),
                self.output_size()
            )));
        }
        if cache.activations.len() != self.layer_sizes.len()
            || cache.activations[0].len() != self.input_size()
        {
            return Err(Error::invalid(
                "forward cache does not belong to this network",
            ));
        }
        let layers = self.num_layers();
        let out = &cache.activations[layers];
        let mut delta: Vec<f64> = output_grad
            .iter()
            .zip(out)
            .map(|(g, &a)| g * self.output_activation.derivative(a))
            .collect();
        for layer in (0..layers).rev() {
            let fan_in = self.layer_sizes[layer];
            let prev = &cache.activations[layer];
            {
                let gw = grads.entry_mut(2 * layer).data_mut();
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, x) in row.iter_mut().zip(prev) {
                        *g += d * x;
                    }
                }
            }
            {
                let gb = grads.entry_mut(2 * layer + 1).data_mut();
                for (g, d) in gb.iter_mut().zip(&delta) {
                    *g += d;
                }
            }
            let w = self.params.entry(2 * layer).data();
            let mut back = vec![0.0; fan_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (b, wi) in back.iter_mut().zip(row) {
                    *b += d * wi;
                }
            }
            if layer > 0 {
                let z = &cache.pre_activations[layer - 1];
                for ((b, &zv), &av) in back.iter_mut().zip(z).zip(prev) {
                    *b *= self.activation.derivative(zv, av);
                }
            }
            delta = back;
        }
        Ok(delta)
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid(
            "a network needs at least an input and an output layer",
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn set(net: &mut Mlp, name: &str, values: &[f64]) {
        net.params_mut()
            .get_mut(name)
            .unwrap()
            .data_mut()
            .copy_from_slice(values);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut net = Mlp::new(
            &[3, 5, 2],
            Activation::Tanh,
            OutputActivation::None,
            &mut seeded(1),
        )
        .unwrap();
        net.params_mut().fill_zero();
        assert_eq!(net.forward(&[0.3, -2.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = Mlp::new(
            &[3, 3],
            Activation::Tanh,
            OutputActivation::None,
            &mut seeded(1),
        )
        .unwrap();
        set(
            &mut net,
            "layers.0.weight",
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_layer_hand_evaluation() {
        // W1 = [0.5, -1]^T, b1 = [0.1, 0.2], W2 = [2, 3], b2 = [-0.5]
        let mut net = Mlp::new(
            &[1, 2, 1],
            Activation::Tanh,
            OutputActivation::None,
            &mut seeded(1),
        )
        .unwrap();
        set(&mut net, "layers.0.weight", &[0.5, -1.0]);
        set(&mut net, "layers.0.bias", &[0.1, 0.2]);
        set(&mut net, "layers.1.weight", &[2.0, 3.0]);
        set(&mut net, "layers.1.bias", &[-0.5]);
        let expected = 2.0 * (0.6f64).tanh() + 3.0 * (-0.8f64).tanh() - 0.5;
        let out = net.forward(&[1.0]).unwrap();
        assert!((out[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let mut rng = seeded(3);
        let net = Mlp::new(&[3, 2], Activation::Tanh, OutputActivation::None, &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0];
        let g = [1.5, -0.25];
        let (grads, input_grad) = net.backward(&x, &g).unwrap();
        let gw = grads.get("layers.0.weight").unwrap().data();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(gw[o * 3 + i], g[o] * x[i]);
            }
        }
        assert_eq!(grads.get("layers.0.bias").unwrap().data(), &g);
        let w = net.params().get("layers.0.weight").unwrap().data();
        for i in 0..3 {
            let expected = g[0] * w[i] + g[1] * w[3 + i];
            assert!((input_grad[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let net = Mlp::new(
            &[4, 6, 3],
            Activation::Relu,
            OutputActivation::Tanh,
            &mut seeded(5),
        )
        .unwrap();
        let (grads, input_grad) = net.backward(&[0.1, 0.2, -0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(grads
            .iter()
            .all(|(_, v)| v.data().iter().all(|&x| x == 0.0)));
        assert!(input_grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let net = Mlp::new(
            &[2, 2],
            Activation::Tanh,
            OutputActivation::None,
            &mut seeded(5),
        )
        .unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            net.backward(&[1.0, 2.0], &[1.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(Mlp::new(
            &[2],
            Activation::Tanh,
            OutputActivation::None,
            &mut seeded(5)
        )
        .is_err());
    }

    #[test]
    fn seeded_init_is_reproducible_and_bounded() {
        let a = Mlp::new(
            &[10, 6, 4],
            Activation::Tanh,
            OutputActivation::None,
            &mut seeded(9),
        )
        .unwrap();
        let b = Mlp::new(
            &[10, 6, 4],
            Activation::Tanh,
            OutputActivation::None,
            &mut seeded(9),
        )
        .unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(a
            .params()
            .get("layers.0.weight")
            .unwrap()
            .data()
            .iter()
            .all(|w| w.abs() <= limit));
    }

    #[test]
    fn from_params_restores_architecture() {
        let net = Mlp::new(
            &[5, 7, 2],
            Activation::Tanh,
            OutputActivation::Tanh,
            &mut seeded(2),
        )
        .unwrap();
        let rebuilt = Mlp::from_params(
            net.params().clone(),
            Activation::Tanh,
            OutputActivation::Tanh,
        )
        .unwrap();
        assert_eq!(rebuilt, net);
    }
}
