//! Images, latents, and the fixed encoder/decoder between them.
//!
//! The encoder is a block-mean downsample followed by the affine map
//! `[0,1] -> [-1,1]`; the decoder inverts the affine map, clamps, and
//! bilinearly upsamples (half-pixel centres, edge-clamped).

use crate::error::{Error, Result};

/// Grayscale image with pixels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn constant(side: usize, value: f64) -> Result<Self> {
        Self::new(side, side, vec![value; side * side])
    }

    /// Builds an image by clamping every value into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(
            height,
            width,
            values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Side length of a square image.
    pub fn side(&self) -> Result<usize> {
        if self.height != self.width {
            return Err(Error::invalid(format!(
                "expected a square image, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Square latent grid with its diffusion timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub side: usize,
    pub values: Vec<f64>,
    pub t: usize,
}

impl Latent {
    pub fn new(side: usize, values: Vec<f64>, t: usize) -> Result<Self> {
        if side == 0 || values.len() != side * side {
            return Err(Error::invalid(format!(
                "latent of side {side} needs {} values, got {}",
                side * side,
                values.len()
            )));
        }
        Ok(Self { side, values, t })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(mean, std, min, max)` of the values, population std.
    pub fn summary(&self) -> [f64; 4] {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self
            .values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        [mean, var.sqrt(), min, max]
    }
}

/// Block-mean downsample of a square image by an integer factor.
pub fn block_mean(img: &Image, out_side: usize) -> Result<Vec<f64>> {
    let side = img.side()?;
    if out_side == 0 || side % out_side != 0 {
        return Err(Error::invalid(format!(
            "target side {out_side} does not divide image side {side}"
        )));
    }
    let factor = side / out_side;
    let area = (factor * factor) as f64;
    let mut out = Vec::with_capacity(out_side * out_side);
    for by in 0..out_side {
        for bx in 0..out_side {
            let mut sum = 0.0;
            for y in by * factor..(by + 1) * factor {
                sum += img.pixels[y * side + bx * factor..][..factor]
                    .iter()
                    .sum::<f64>();
            }
            out.push(sum / area);
        }
    }
    Ok(out)
}

pub fn encode(img: &Image, latent_side: usize) -> Result<Latent> {
    let means = block_mean(img, latent_side)?;
    Latent::new(
        latent_side,
        means.into_iter().map(|m| 2.0 * m - 1.0).collect(),
        0,
    )
}

pub fn decode(z: &Latent, image_side: usize) -> Result<Image> {
    if z.side == 0 || !image_side.is_multiple_of(z.side) {
        return Err(Error::invalid(format!(
            "image side {image_side} is not a multiple of latent side {}",
            z.side
        )));
    }
    let cells: Vec<f64> = z
        .values
        .iter()
        .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
        .collect();
    let pixels = bilinear_upsample(&cells, z.side, image_side);
    Image::new(image_side, image_side, pixels)
}

/// Coordinate in source space for destination index `i`, clamped to the grid.
fn source_coord(i: usize, scale: f64, src_side: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) / scale - 0.5).clamp(0.0, (src_side - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(src_side - 1);
    (lo, hi, s - lo as f64)
}

fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a + f * (b - a)
}

pub fn bilinear_upsample(src: &[f64], src_side: usize, dst_side: usize) -> Vec<f64> {
    let scale = dst_side as f64 / src_side as f64;
    let coords: Vec<_> = (0..dst_side)
        .map(|i| source_coord(i, scale, src_side))
        .collect();
    let mut out = Vec::with_capacity(dst_side * dst_side);
    for &(y0, y1, fy) in &coords {
        for &(x0, x1, fx) in &coords {
            let top = lerp(src[y0 * src_side + x0], src[y0 * src_side + x1], fx);
            let bottom = lerp(src[y1 * src_side + x0], src[y1 * src_side + x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_constant_images() {
        let z = encode(&Image::constant(32, 0.5).unwrap(), 8).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert_eq!(z.t, 0);
        let z = encode(&Image::constant(32, 1.0).unwrap(), 8).unwrap();
        assert!(z.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn encode_hand_block() {
        let img = Image::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(encode(&img, 1).unwrap().values, vec![0.0]);
    }

    #[test]
    fn encode_rejects_non_divisible() {
        let img = Image::constant(32, 0.5).unwrap();
        assert!(matches!(encode(&img, 5), Err(Error::InvalidInput(_))));
        let rect = Image::new(2, 4, vec![0.0; 8]).unwrap();
        assert!(encode(&rect, 1).is_err());
    }

    #[test]
    fn decode_zero_latent_is_mid_grey() {
        let z = Latent::new(8, vec![0.0; 64], 0).unwrap();
        let img = decode(&z, 32).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn decode_clamps() {
        let z = Latent::new(2, vec![3.0, -3.0, 3.0, 3.0], 0).unwrap();
        let img = decode(&z, 8).unwrap();
        assert_eq!(img.get(7, 7), 1.0);
        assert_eq!(img.get(0, 7), 0.0);
        assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(decode(&z, 7).is_err());
    }

    proptest! {
        #[test]
        fn constant_images_survive_round_trip(k in 0u32..=256) {
            let value = k as f64 / 256.0;
            let img = Image::constant(32, value).unwrap();
            let back = decode(&encode(&img, 8).unwrap(), 32).unwrap();
            prop_assert_eq!(back, img);
        }

        #[test]
        fn decode_stays_in_unit_range(values in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let z = Latent::new(4, values, 3).unwrap();
            let img = decode(&z, 16).unwrap();
            prop_assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }

        // Cells whose 3x3 neighbourhood is uniform decode to a constant block,
        // so encoding recovers them exactly.
        #[test]
        fn locally_constant_cells_are_lossless(levels in proptest::collection::vec(0u32..=4, 4)) {
            let side = 8;
            let mut values = vec![0.0; side * side];
            for y in 0..side {
                for x in 0..side {
                    let q = (y / 4) * 2 + x / 4;
                    values[y * side + x] = levels[q] as f64 / 2.0 - 1.0;
                }
            }
            let z = Latent::new(side, values.clone(), 0).unwrap();
            let back = encode(&decode(&z, 32).unwrap(), side).unwrap();
            for y in 0..side {
                for x in 0..side {
                    let uniform = (y.saturating_sub(1)..=(y + 1).min(side - 1)).all(|ny| {
                        (x.saturating_sub(1)..=(x + 1).min(side - 1))
                            .all(|nx| values[ny * side + nx] == values[y * side + x])
                    });
                    if uniform {
                        prop_assert_eq!(back.values[y * side + x], values[y * side + x]);
                    }
                }
            }
        }
    }
}
