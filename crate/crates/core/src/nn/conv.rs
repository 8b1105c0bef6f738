use rand::Rng;
use rand_distr::StandardNormal;

/// A bank of 3x3 filters mapping `in_channels` to `out_channels`.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][3][3]` flattened.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    /// He-scaled normal filters with zero bias.
    pub fn random<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let std = (2.0 / (9 * in_channels) as f64).sqrt();
        let weights = (0..out_channels * in_channels * 9)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            in_channels,
            out_channels,
            weights,
            bias: vec![0.0; out_channels],
        }
    }
}

/// Valid-padding, stride-1 3x3 convolution over channel-major maps
/// (`[channel][row][col]`). Returns the output maps and their side lengths.
pub fn conv3x3_valid(
    layer: &ConvLayer,
    input: &[f64],
    height: usize,
    width: usize,
) -> (Vec<f64>, usize, usize) {
    assert!(
        height >= 3 && width >= 3,
        "3x3 valid convolution needs at least 3x3 input"
    );
    assert_eq!(input.len(), layer.in_channels * height * width);
    let (oh, ow) = (height - 2, width - 2);
    let mut out = vec![0.0; layer.out_channels * oh * ow];
    for (o, out_plane) in out.chunks_exact_mut(oh * ow).enumerate() {
        out_plane.fill(layer.bias[o]);
        for c in 0..layer.in_channels {
            let kernel = &layer.weights[(o * layer.in_channels + c) * 9..][..9];
            let plane = &input[c * height * width..][..height * width];
            for (k, &wk) in kernel.iter().enumerate() {
                let (ky, kx) = (k / 3, k % 3);
                for y in 0..oh {
                    let src = &plane[(y + ky) * width + kx..][..ow];
                    let dst = &mut out_plane[y * ow..][..ow];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wk * s;
                    }
                }
            }
        }
    }
    (out, oh, ow)
}
