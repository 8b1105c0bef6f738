//! Image quality metrics and the weighted composite reward.

use std::sync::OnceLock;

use crate::codec::Image;
use crate::error::{Error, Result};
use crate::nn::{conv3x3_valid, ConvLayer};
use crate::rng::seeded;

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Reward weights: PSNR, SSIM, perceptual, efficiency.
pub const WEIGHT_PSNR: f64 = 0.4;
pub const WEIGHT_SSIM: f64 = 0.3;
pub const WEIGHT_PERCEPTUAL: f64 = 0.2;
pub const WEIGHT_EFFICIENCY: f64 = 0.1;

fn check_same_shape(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// PSNR for a given mean squared error with peak value 1.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean SSIM over all 7x7 windows (uniform weights, population statistics).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (pa, pb) = (a.pixels(), b.pixels());
    let mut total = 0.0;
    let mut windows = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in y..y + SSIM_WINDOW {
                for wx in x..x + SSIM_WINDOW {
                    let (u, v) = (pa[wy * w + wx], pb[wy * w + wx]);
                    sa += u;
                    sb += v;
                    saa += u * u;
                    sbb += v * v;
                    sab += u * v;
                }
            }
            let (mu_a, mu_b) = (sa / n, sb / n);
            let var_a = (saa / n - mu_a * mu_a).max(0.0);
            let var_b = (sbb / n - mu_b * mu_b).max(0.0);
            let cov = sab / n - mu_a * mu_b;
            let numerator = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let denominator = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
            total += numerator / denominator;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Seed of the fixed random filter bank behind [`perceptual_distance`].
pub const PERCEPTUAL_SEED: u64 = 0x4C50_4950_5331;
const PERCEPTUAL_CHANNELS: [usize; 2] = [8, 8];

fn perceptual_layers() -> &'static [ConvLayer; 2] {
    static LAYERS: OnceLock<[ConvLayer; 2]> = OnceLock::new();
    LAYERS.get_or_init(|| {
        let mut rng = seeded(PERCEPTUAL_SEED);
        let first = ConvLayer::random(1, PERCEPTUAL_CHANNELS[0], &mut rng);
        let second = ConvLayer::random(PERCEPTUAL_CHANNELS[0], PERCEPTUAL_CHANNELS[1], &mut rng);
        [first, second]
    })
}

/// Rectified feature maps of both perceptual layers, each scaled to unit
/// length across channels at every spatial position.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptualFeatures {
    /// `(maps, channels, positions)` per layer, channel-major.
    layers: Vec<(Vec<f64>, usize, usize)>,
    height: usize,
    width: usize,
}

impl PerceptualFeatures {
    pub fn new(img: &Image) -> Result<Self> {
        if img.height() < 5 || img.width() < 5 {
            return Err(Error::invalid(
                "perceptual distance needs at least 5x5 images",
            ));
        }
        let mut layers = Vec::with_capacity(2);
        // centre intensities so a constant mid-grey input gives zero response
        let mut input: Vec<f64> = img.pixels().iter().map(|p| p - 0.5).collect();
        let (mut h, mut w) = (img.height(), img.width());
        for layer in perceptual_layers() {
            let (mut out, oh, ow) = conv3x3_valid(layer, &input, h, w);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            let plane = oh * ow;
            let mut unit = out.clone();
            for pos in 0..plane {
                let norm = (0..layer.out_channels)
                    .map(|c| out[c * plane + pos] * out[c * plane + pos])
                    .sum::<f64>()
                    .sqrt()
                    + 1e-10;
                for c in 0..layer.out_channels {
                    unit[c * plane + pos] /= norm;
                }
            }
            layers.push((unit, layer.out_channels, plane));
            input = out;
            h = oh;
            w = ow;
        }
        Ok(Self {
            layers,
            height: img.height(),
            width: img.width(),
        })
    }

    /// Mean over layers of the position-averaged squared distance between
    /// unit feature vectors.
    pub fn distance(&self, other: &PerceptualFeatures) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::invalid(format!(
                "image shapes differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let total: f64 = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|((a, _, plane), (b, _, _))| {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / *plane as f64
            })
            .sum();
        Ok(total / self.layers.len() as f64)
    }
}

/// Fixed-weight stand-in for a learned perceptual distance.
///
/// Two seeded 3x3 convolution layers with ReLU extract feature maps; at every
/// spatial position the channel vector is scaled to unit length, and the
/// distance per layer is the squared difference summed over channels and
/// averaged over positions. The result is the mean over the two layers and
/// lies in `[0, 2]` since rectified unit vectors are at most 90° apart.
pub fn perceptual_distance(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b)?;
    PerceptualFeatures::new(a)?.distance(&PerceptualFeatures::new(b)?)
}

/// Divisors that map raw metrics into `[0, 1]` before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardNormalization {
    pub psnr_db: f64,
    pub perceptual: f64,
}

impl Default for RewardNormalization {
    fn default() -> Self {
        Self {
            psnr_db: 50.0,
            perceptual: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub psnr_db: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub efficiency: f64,
    pub composite: f64,
}

/// `0.4 n_psnr + 0.3 n_ssim + 0.2 (1 - n_perc) + 0.1 efficiency`, with
/// `efficiency = 1 - steps_used / T`.
pub fn composite_reward(
    psnr_db: f64,
    ssim: f64,
    perceptual: f64,
    steps_used: usize,
    total_steps: usize,
    norm: &RewardNormalization,
) -> Result<RewardBreakdown> {
    if steps_used == 0 || steps_used > total_steps {
        return Err(Error::invalid(format!(
            "steps_used {steps_used} outside 1..={total_steps}"
        )));
    }
    let n_psnr = (psnr_db / norm.psnr_db).clamp(0.0, 1.0);
    let n_ssim = ssim.clamp(0.0, 1.0);
    let n_perc = (perceptual / norm.perceptual).clamp(0.0, 1.0);
    let efficiency = 1.0 - steps_used as f64 / total_steps as f64;
    let composite = WEIGHT_PSNR * n_psnr
        + WEIGHT_SSIM * n_ssim
        + WEIGHT_PERCEPTUAL * (1.0 - n_perc)
        + WEIGHT_EFFICIENCY * efficiency;
    Ok(RewardBreakdown {
        psnr_db,
        ssim,
        perceptual,
        efficiency,
        composite,
    })
}

/// A reference image with its perceptual features computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    image: Image,
    features: PerceptualFeatures,
}

impl Reference {
    pub fn new(image: Image) -> Result<Self> {
        let features = PerceptualFeatures::new(&image)?;
        Ok(Self { image, features })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    /// Same result as [`score`] against the wrapped image.
    pub fn score(
        &self,
        reconstruction: &Image,
        steps_used: usize,
        total_steps: usize,
        norm: &RewardNormalization,
    ) -> Result<RewardBreakdown> {
        composite_reward(
            psnr(reconstruction, &self.image)?,
            ssim(reconstruction, &self.image)?,
            PerceptualFeatures::new(reconstruction)?.distance(&self.features)?,
            steps_used,
            total_steps,
            norm,
        )
    }
}

/// Scores a reconstruction against its reference.
pub fn score(
    reconstruction: &Image,
    reference: &Image,
    steps_used: usize,
    total_steps: usize,
    norm: &RewardNormalization,
) -> Result<RewardBreakdown> {
    composite_reward(
        psnr(reconstruction, reference)?,
        ssim(reconstruction, reference)?,
        perceptual_distance(reconstruction, reference)?,
        steps_used,
        total_steps,
        norm,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, seeded};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(seed: u64, side: usize) -> Image {
        let mut rng = seeded(seed);
        Image::new(
            side,
            side,
            (0..side * side).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    fn noisy(base: &Image, sigma: f64, seed: u64) -> Image {
        let n = normal_vec(&mut seeded(seed), base.pixels().len());
        Image::from_clamped(
            base.height(),
            base.width(),
            base.pixels()
                .iter()
                .zip(n)
                .map(|(p, e)| p + sigma * e)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn psnr_values() {
        let a = random_image(1, 16);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        let zeros = Image::constant(16, 0.0).unwrap();
        let tenth = Image::constant(16, 0.1).unwrap();
        assert!((psnr(&zeros, &tenth).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&zeros, &Image::constant(8, 0.0).unwrap()).is_err());
    }

    #[test]
    fn ssim_values() {
        let a = random_image(2, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let zero = Image::constant(16, 0.0).unwrap();
        let one = Image::constant(16, 1.0).unwrap();
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&zero, &one).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 9.999e-5).abs() < 1e-8);
        assert!(ssim(
            &Image::constant(6, 0.0).unwrap(),
            &Image::constant(6, 0.0).unwrap()
        )
        .is_err());
    }

    #[test]
    fn perceptual_basics() {
        let a = random_image(3, 32);
        assert_eq!(perceptual_distance(&a, &a).unwrap(), 0.0);
        let b = random_image(4, 32);
        let d = perceptual_distance(&a, &b).unwrap();
        assert!(d > 0.0 && d <= 2.0);
    }

    #[test]
    fn perceptual_grows_with_noise() {
        let base = random_image(5, 32);
        let mean_at = |sigma: f64| {
            (0..100)
                .map(|k| perceptual_distance(&base, &noisy(&base, sigma, 1000 + k)).unwrap())
                .sum::<f64>()
                / 100.0
        };
        let (d1, d2, d3) = (mean_at(0.05), mean_at(0.1), mean_at(0.2));
        assert!(d1 < d2 && d2 < d3, "{d1} {d2} {d3}");
    }

    #[test]
    fn composite_examples() {
        let norm = RewardNormalization::default();
        let r = composite_reward(25.0, 0.5, 0.25, 25, 50, &norm).unwrap();
        assert!((r.composite - 0.5).abs() < 1e-12);
        let r = composite_reward(50.0, 1.0, 0.0, 1, 50, &norm).unwrap();
        assert!((r.composite - 0.998).abs() < 1e-12);
        let r = composite_reward(0.0, 0.0, 0.7, 50, 50, &norm).unwrap();
        assert_eq!(r.composite, 0.0);
        assert!(composite_reward(30.0, 0.5, 0.1, 0, 50, &norm).is_err());
        assert!(composite_reward(30.0, 0.5, 0.1, 51, 50, &norm).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        let sum = WEIGHT_PSNR + WEIGHT_SSIM + WEIGHT_PERCEPTUAL + WEIGHT_EFFICIENCY;
        assert!((sum - 1.0).abs() <= f64::EPSILON, "{sum}");
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = random_image(s1, 12);
            let b = random_image(s2 + 5000, 12);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((perceptual_distance(&a, &b).unwrap() - perceptual_distance(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn composite_bounded_and_monotone(
            p in -10.0f64..120.0, s in -1.0f64..1.0, d in 0.0f64..2.0,
            steps in 1usize..=50, dp in 0.0f64..10.0, ds in 0.0f64..0.5, dd in 0.0f64..0.5,
        ) {
            let norm = RewardNormalization::default();
            let base = composite_reward(p, s, d, steps, 50, &norm).unwrap().composite;
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert!(composite_reward(p + dp, s, d, steps, 50, &norm).unwrap().composite >= base);
            prop_assert!(composite_reward(p, (s + ds).min(1.0), d, steps, 50, &norm).unwrap().composite >= base);
            prop_assert!(composite_reward(p, s, d + dd, steps, 50, &norm).unwrap().composite <= base);
            if steps < 50 {
                prop_assert!(composite_reward(p, s, d, steps + 1, 50, &norm).unwrap().composite <= base);
            }
        }
    }

    #[test]
    fn cached_reference_matches_direct_score() {
        let norm = RewardNormalization::default();
        for seed in 0..5 {
            let a = random_image(seed, 16);
            let b = noisy(&a, 0.1, seed + 50);
            let r = Reference::new(a.clone()).unwrap();
            assert_eq!(
                r.score(&b, 7, 50, &norm).unwrap(),
                score(&b, &a, 7, 50, &norm).unwrap()
            );
        }
    }
}
