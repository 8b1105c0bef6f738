//! Synthetic scene corpus, degradation model and PGM/manifest I/O.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::codec::{bilinear_upsample, block_mean, Image};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal_vec, seeded, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SceneCategory {
    BusinessDistrict,
    DenseResidential,
    Desert,
    Forest,
    Industrial,
    TrainStation,
    River,
    Runway,
}

impl SceneCategory {
    /// All categories in report order.
    pub const ALL: [SceneCategory; 8] = [
        SceneCategory::BusinessDistrict,
        SceneCategory::DenseResidential,
        SceneCategory::Desert,
        SceneCategory::Forest,
        SceneCategory::Industrial,
        SceneCategory::TrainStation,
        SceneCategory::River,
        SceneCategory::Runway,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneCategory::BusinessDistrict => "business_district",
            SceneCategory::DenseResidential => "dense_residential",
            SceneCategory::Desert => "desert",
            SceneCategory::Forest => "forest",
            SceneCategory::Industrial => "industrial",
            SceneCategory::TrainStation => "train_station",
            SceneCategory::River => "river",
            SceneCategory::Runway => "runway",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("listed")
    }
}

impl fmt::Display for SceneCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scene category {s:?}")))
    }
}

struct Canvas {
    side: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn filled(side: usize, value: f64) -> Self {
        Self {
            side,
            px: vec![value; side * side],
        }
    }

    fn set(&mut self, x: usize, y: usize, v: f64) {
        if x < self.side && y < self.side {
            self.px[y * self.side + x] = v;
        }
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, v: f64) {
        for y in y0..(y0 + h).min(self.side) {
            for x in x0..(x0 + w).min(self.side) {
                self.px[y * self.side + x] = v;
            }
        }
    }

    fn add_grain(&mut self, rng: &mut SeededRng, sigma: f64) {
        let noise = normal_vec(rng, self.px.len());
        for (p, n) in self.px.iter_mut().zip(noise) {
            *p += sigma * n;
        }
    }

    /// Adds bilinearly interpolated noise from a `grid x grid` lattice.
    fn add_value_noise(&mut self, rng: &mut SeededRng, grid: usize, amplitude: f64) {
        let lattice: Vec<f64> = (0..grid * grid)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let field = bilinear_upsample(&lattice, grid, self.side);
        for (p, f) in self.px.iter_mut().zip(field) {
            *p += amplitude * f;
        }
    }

    fn add_disk(&mut self, cx: f64, cy: f64, radius: f64, v: f64) {
        for y in 0..self.side {
            for x in 0..self.side {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d <= radius {
                    self.px[y * self.side + x] = v;
                }
            }
        }
    }

    fn into_image(self) -> Result<Image> {
        Image::from_clamped(self.side, self.side, self.px)
    }
}

fn runway(side: usize, rng: &mut SeededRng) -> Canvas {
    let mut c = Canvas::filled(side, 0.45);
    c.add_value_noise(rng, 4, 0.06);
    let width = (side * 2 / 5).max(6);
    let max_left = side - width;
    let left = rng.random_range(max_left / 4..=max_left * 3 / 4);
    c.fill_rect(left, 0, width, side, 0.18);
    // edge lines
    c.fill_rect(left, 0, 1, side, 0.92);
    c.fill_rect(left + width - 1, 0, 1, side, 0.92);
    // centreline dashes
    let centre = left + width / 2;
    let phase = rng.random_range(0..5);
    for y in 0..side {
        if (y + phase) % 5 < 3 {
            c.set(centre, y, 0.95);
        }
    }
    // threshold bars at both ends
    let bar_len = (side / 8).max(2);
    for k in (left + 2..left + width - 2).step_by(2) {
        if k.abs_diff(centre) > 1 {
            c.fill_rect(k, 1, 1, bar_len, 0.9);
            c.fill_rect(k, side - 1 - bar_len, 1, bar_len, 0.9);
        }
    }
    c.add_grain(rng, 0.015);
    c
}

fn industrial(side: usize, rng: &mut SeededRng) -> Canvas {
    let mut c = Canvas::filled(side, 0.28);
    let cell = rng.random_range(6..=8);
    for gy in (0..side).step_by(cell) {
        for gx in (0..side).step_by(cell) {
            let shade = rng.random_range(0.55..0.92);
            c.fill_rect(gx + 1, gy + 1, cell - 2, cell - 2, shade);
            if rng.random_bool(0.5) {
                let inset = shade - rng.random_range(0.1..0.25);
                c.fill_rect(gx + 2, gy + 2, (cell - 4).max(1), (cell - 4) / 2, inset);
            }
        }
    }
    c.add_grain(rng, 0.01);
    c
}

fn dense_residential(side: usize, rng: &mut SeededRng) -> Canvas {
    let mut c = Canvas::filled(side, 0.35);
    c.add_value_noise(rng, 4, 0.05);
    for gy in (0..side).step_by(4) {
        for gx in (0..side).step_by(4) {
            if rng.random_bool(0.85) {
                let w = rng.random_range(2..=3);
                let h = rng.random_range(2..=3);
                c.fill_rect(gx, gy, w, h, rng.random_range(0.5..0.88));
            } else {
                c.fill_rect(gx + 1, gy + 1, 2, 2, 0.15);
            }
        }
    }
    c.add_grain(rng, 0.015);
    c
}

fn business_district(side: usize, rng: &mut SeededRng) -> Canvas {
    let mut c = Canvas::filled(side, 0.4);
    let count = rng.random_range(8..=12);
    for _ in 0..count {
        let w = rng.random_range(3..=side / 3);
        let h = rng.random_range(3..=side / 3);
        let x = rng.random_range(0..side - w);
        let y = rng.random_range(0..side - h);
        // shadow then roof
        c.fill_rect(x + 1, y + 1, w, h, 0.12);
        c.fill_rect(x, y, w, h, rng.random_range(0.3..0.95));
    }
    c.add_grain(rng, 0.015);
    c
}

fn train_station(side: usize, rng: &mut SeededRng) -> Canvas {
    let mut c = Canvas::filled(side, 0.45);
    c.add_value_noise(rng, 4, 0.05);
    let start = rng.random_range(1..side / 4);
    let tracks = rng.random_range(3..=5);
    let mut x = start;
    for _ in 0..tracks {
        if x + 3 >= side {
            break;
        }
        c.fill_rect(x, 0, 1, side, 0.1);
        c.fill_rect(x + 2, 0, 1, side, 0.1);
        c.fill_rect(x + 3, 0, 1, side, 0.78);
        x += 5;
    }
    let blobs = rng.random_range(2..=4);
    for _ in 0..blobs {
        let cx = rng.random_range(0.0..side as f64);
        let cy = rng.random_range(0.0..side as f64);
        let r = rng.random_range(1.5..side as f64 / 7.0);
        c.add_disk(cx, cy, r, rng.random_range(0.7..0.9));
    }
    c.add_grain(rng, 0.015);
    c
}

fn river(side: usize, rng: &mut SeededRng) -> Canvas {
    let mut c = Canvas::filled(side, 0.55);
    c.add_value_noise(rng, 4, 0.12);
    c.add_grain(rng, 0.02);
    let s = side as f64;
    let amplitude = rng.random_range(0.08..0.2) * s;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let freq = rng.random_range(0.6..1.4);
    let half_width = rng.random_range(0.08..0.13) * s;
    let centre = rng.random_range(0.4..0.6) * s;
    for y in 0..side {
        for x in 0..side {
            let path =
                centre + amplitude * (std::f64::consts::TAU * freq * x as f64 / s + phase).sin();
            let d = (y as f64 - path).abs();
            // soft shoreline over ~2 px
            let water = ((half_width + 1.0 - d) / 2.0).clamp(0.0, 1.0);
            let p = &mut c.px[y * side + x];
            *p = *p * (1.0 - water) + 0.15 * water;
        }
    }
    c
}

fn desert(side: usize, rng: &mut SeededRng) -> Canvas {
    let mut c = Canvas::filled(side, 0.62);
    c.add_value_noise(rng, 3, 0.15);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let s = side as f64;
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 * dx + y as f64 * dy) / s;
            c.px[y * side + x] += 0.04 * (std::f64::consts::TAU * 1.5 * u + phase).sin();
        }
    }
    c.add_grain(rng, 0.004);
    c
}

fn forest(side: usize, rng: &mut SeededRng) -> Canvas {
    let noise = normal_vec(rng, side * side);
    let mut c = Canvas::filled(side, 0.32);
    for y in 0..side {
        for x in 0..side {
            let mut sum = 0.0;
            let mut count = 0.0;
            for ny in y.saturating_sub(1)..=(y + 1).min(side - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(side - 1) {
                    sum += noise[ny * side + nx];
                    count += 1.0;
                }
            }
            // white noise minus its local mean keeps the high band
            c.px[y * side + x] += 0.14 * (noise[y * side + x] - sum / count);
        }
    }
    c.add_value_noise(rng, 4, 0.05);
    c
}

/// Deterministic procedural scene for `(category, seed)`.
pub fn generate_scene(category: SceneCategory, seed: u64, side: usize) -> Result<Image> {
    if side < 16 {
        return Err(Error::invalid(format!(
            "scene side must be at least 16, got {side}"
        )));
    }
    let mut rng = seeded(derive_seed(seed, category.index() as u64 + 1));
    let canvas = match category {
        SceneCategory::BusinessDistrict => business_district(side, &mut rng),
        SceneCategory::DenseResidential => dense_residential(side, &mut rng),
        SceneCategory::Desert => desert(side, &mut rng),
        SceneCategory::Forest => forest(side, &mut rng),
        SceneCategory::Industrial => industrial(side, &mut rng),
        SceneCategory::TrainStation => train_station(side, &mut rng),
        SceneCategory::River => river(side, &mut rng),
        SceneCategory::Runway => runway(side, &mut rng),
    };
    canvas.into_image()
}

/// Block-mean downsample by `factor`, seeded Gaussian noise, clamp to `[0, 1]`.
pub fn degrade(hr: &Image, factor: usize, noise_sigma: f64, seed: u64) -> Result<Image> {
    let side = hr.side()?;
    if factor == 0 || side % factor != 0 {
        return Err(Error::invalid(format!(
            "factor {factor} does not divide side {side}"
        )));
    }
    if noise_sigma < 0.0 {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    let out_side = side / factor;
    let mut values = block_mean(hr, out_side)?;
    if noise_sigma > 0.0 {
        let noise = normal_vec(&mut seeded(seed), values.len());
        for (v, n) in values.iter_mut().zip(noise) {
            *v += noise_sigma * n;
        }
    }
    Image::from_clamped(out_side, out_side, values)
}

/// Mean absolute horizontal difference.
pub fn mean_abs_dx(img: &Image) -> f64 {
    let (h, w) = (img.height(), img.width());
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w - 1 {
            sum += (img.get(y, x + 1) - img.get(y, x)).abs();
        }
    }
    sum / (h * (w - 1)) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub image_side: usize,
    pub factor: usize,
    pub noise_sigma: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            image_side: 32,
            factor: 4,
            noise_sigma: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub hr: Image,
    pub lr: Image,
    pub category: SceneCategory,
    pub seed: u64,
}

impl ScenePair {
    pub fn generate(category: SceneCategory, seed: u64, cfg: &CorpusConfig) -> Result<Self> {
        let hr = generate_scene(category, seed, cfg.image_side)?;
        let lr = degrade(
            &hr,
            cfg.factor,
            cfg.noise_sigma,
            lr_noise_seed(category, seed),
        )?;
        Ok(Self {
            hr,
            lr,
            category,
            seed,
        })
    }
}

fn lr_noise_seed(category: SceneCategory, seed: u64) -> u64 {
    derive_seed(seed, 0x100 + category.index() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<ScenePair>,
    pub test: Vec<ScenePair>,
}

/// Number of training scenes per category; the rest are held out.
pub fn train_count(n_per_category: usize) -> usize {
    (n_per_category * 4 / 5).clamp(1, n_per_category - 1)
}

/// `n` scenes per category with seeds `seed * 10000 + i`; the first 80% of
/// each category (by seed) train, the remainder test.
pub fn build_corpus(n_per_category: usize, seed: u64, cfg: &CorpusConfig) -> Result<Corpus> {
    if n_per_category < 2 {
        return Err(Error::invalid(
            "need at least 2 scenes per category to split",
        ));
    }
    let n_train = train_count(n_per_category);
    let mut corpus = Corpus {
        train: Vec::new(),
        test: Vec::new(),
    };
    for category in SceneCategory::ALL {
        for i in 0..n_per_category {
            let scene_seed = seed.wrapping_mul(10_000).wrapping_add(i as u64);
            let pair = ScenePair::generate(category, scene_seed, cfg)?;
            if i < n_train {
                corpus.train.push(pair);
            } else {
                corpus.test.push(pair);
            }
        }
    }
    Ok(corpus)
}

/// Binary PGM with maxval 255; pixels are `round_half_up(p * 255)`.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.pixels()
            .iter()
            .map(|p| (p * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.is_empty() {
        return Err(Error::parse(0, "empty file"));
    }
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::parse(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut header = [0usize; 3];
    for (k, field) in header.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][k];
            return Err(Error::parse(pos, format!("expected {what}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("digits are ascii")
            .parse()
            .map_err(|_| Error::parse(start, "header number out of range"))?;
    }
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(Error::Unsupported(format!(
            "PGM maxval {maxval}, only 255 is supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(pos, "zero image dimension"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::parse(pos, "expected whitespace after maxval")),
    }
    let needed = width * height;
    let data = &bytes[pos..];
    if data.len() < needed {
        return Err(Error::parse(
            bytes.len(),
            format!(
                "truncated pixel data: need {needed} bytes, have {}",
                data.len()
            ),
        ));
    }
    Image::new(
        height,
        width,
        data[..needed].iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

pub fn save_pgm(img: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// One row of the corpus manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub category: SceneCategory,
    pub seed: u64,
    pub split: Split,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
}

pub const MANIFEST_HEADER: &str = "category,seed,split,hr_path,lr_path";

pub fn format_manifest(rows: &[ManifestRow]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.category,
            r.seed,
            r.split.name(),
            r.hr_path.display(),
            r.lr_path.display()
        ));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    let mut offset = 0;
    match lines.next() {
        Some(h) if h.trim() == MANIFEST_HEADER => offset += h.len() + 1,
        _ => {
            return Err(Error::parse(
                0,
                format!("manifest header must be `{MANIFEST_HEADER}`"),
            ))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        let line_start = offset;
        offset += line.len() + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [category, seed, split, hr, lr] = fields[..] else {
            return Err(Error::parse(line_start, "manifest row needs 5 fields"));
        };
        rows.push(ManifestRow {
            category: category
                .parse()
                .map_err(|e: Error| Error::parse(line_start, e.to_string()))?,
            seed: seed
                .parse()
                .map_err(|_| Error::parse(line_start, format!("bad seed {seed:?}")))?,
            split: match split {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(Error::parse(line_start, format!("bad split {other:?}"))),
            },
            hr_path: PathBuf::from(hr),
            lr_path: PathBuf::from(lr),
        });
    }
    Ok(rows)
}
