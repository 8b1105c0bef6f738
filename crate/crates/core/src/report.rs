//! Baseline versus policy-guided evaluation on held-out scenes, and the CSV
//! reports built from it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::codec::{decode, encode};
use crate::diffusion::{sample, ActionSource, Denoiser};
use crate::env::{EnvConfig, PolicyActor};
use crate::error::{Error, Result};
use crate::metrics::score;
use crate::ppo::{CurvePoint, GaussianPolicy};
use crate::rng::derive_seed;
use crate::scenes::{SceneCategory, ScenePair};

pub const TABLE_HEADER: &str = "mode,category,psnr_db,ssim,lpips_proxy,steps_used";
pub const DELTAS_HEADER: &str = "category,delta_psnr_db,delta_ssim,delta_lpips_proxy,psnr_win";
pub const CURVE_HEADER: &str = "epoch,mean_reward,policy_loss,value_loss,clip_fraction";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Baseline,
    Rl,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Rl => "rl",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Mode::Baseline),
            "rl" => Some(Mode::Rl),
            _ => None,
        }
    }
}

/// Metrics for one reconstructed test scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub category: SceneCategory,
    pub scene_seed: u64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub lpips_proxy: f64,
    pub steps_used: usize,
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryResult {
    pub category: SceneCategory,
    pub mode: Mode,
    pub n_images: usize,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub mean_lpips_proxy: f64,
    pub mean_steps_used: f64,
    pub mean_composite: f64,
}

/// Sampling seed of one test scene; depends only on the scene's identity,
/// so both modes and every ordering see the same `z_T` and step noise.
pub fn image_seed(seed: u64, pair: &ScenePair) -> u64 {
    derive_seed(derive_seed(seed, pair.category.index() as u64), pair.seed)
}

/// Reconstructs and scores every pair, in input order. With a policy the
/// squashed mean action drives each step; without one all actions are zero.
pub fn evaluate_images(
    denoiser: &Denoiser,
    policy: Option<&GaussianPolicy>,
    test: &[ScenePair],
    seed: u64,
    cfg: &EnvConfig,
    threads: usize,
) -> Result<Vec<ImageResult>> {
    if test.is_empty() {
        return Err(Error::config("test split is empty"));
    }
    let schedule = cfg.schedule()?;
    let run = |pair: &ScenePair| -> Result<ImageResult> {
        let condition = encode(&pair.lr, cfg.latent_side)?;
        let mut actor = policy.map(|policy| PolicyActor { policy });
        let source = actor.as_mut().map(|a| a as &mut dyn ActionSource);
        let (z, steps_used) = sample(
            &condition,
            denoiser,
            &schedule,
            source,
            image_seed(seed, pair),
        )?;
        let recon = decode(&z, cfg.image_side)?;
        let s = score(&recon, &pair.hr, steps_used, schedule.steps(), &cfg.norm)?;
        Ok(ImageResult {
            category: pair.category,
            scene_seed: pair.seed,
            psnr_db: s.psnr_db,
            ssim: s.ssim,
            lpips_proxy: s.perceptual,
            steps_used,
            composite: s.composite,
        })
    };
    if threads <= 1 {
        return test.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| test.par_iter().map(run).collect())
}

/// Per-category means in report order. Within a category images are summed
/// in scene-seed order, so the result does not depend on input order.
pub fn aggregate(images: &[ImageResult], mode: Mode) -> Vec<CategoryResult> {
    SceneCategory::ALL
        .iter()
        .filter_map(|&category| {
            let mut rows: Vec<&ImageResult> =
                images.iter().filter(|r| r.category == category).collect();
            if rows.is_empty() {
                return None;
            }
            rows.sort_by_key(|r| r.scene_seed);
            let n = rows.len() as f64;
            let mean = |f: &dyn Fn(&ImageResult) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            Some(CategoryResult {
                category,
                mode,
                n_images: rows.len(),
                mean_psnr_db: mean(&|r| r.psnr_db),
                mean_ssim: mean(&|r| r.ssim),
                mean_lpips_proxy: mean(&|r| r.lpips_proxy),
                mean_steps_used: mean(&|r| r.steps_used as f64),
                mean_composite: mean(&|r| r.composite),
            })
        })
        .collect()
}

/// [`evaluate_images`] followed by [`aggregate`].
pub fn evaluate(
    denoiser: &Denoiser,
    policy: Option<&GaussianPolicy>,
    test: &[ScenePair],
    seed: u64,
    cfg: &EnvConfig,
    threads: usize,
) -> Result<Vec<CategoryResult>> {
    let mode = if policy.is_some() {
        Mode::Rl
    } else {
        Mode::Baseline
    };
    Ok(aggregate(
        &evaluate_images(denoiser, policy, test, seed, cfg, threads)?,
        mode,
    ))
}

/// Image-weighted mean composite reward over all categories.
pub fn overall_composite(results: &[CategoryResult]) -> f64 {
    let n: usize = results.iter().map(|r| r.n_images).sum();
    results
        .iter()
        .map(|r| r.mean_composite * r.n_images as f64)
        .sum::<f64>()
        / n.max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub category: SceneCategory,
    pub delta_psnr_db: f64,
    pub delta_ssim: f64,
    pub delta_lpips_proxy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
    /// Categories with `delta_psnr_db > 0`.
    pub psnr_wins: usize,
}

/// `rl - baseline` per category; both lists must cover the same categories
/// in the same order.
pub fn compare(baseline: &[CategoryResult], rl: &[CategoryResult]) -> Result<DeltaTable> {
    let same = baseline.len() == rl.len()
        && baseline
            .iter()
            .zip(rl)
            .all(|(b, r)| b.category == r.category);
    if !same {
        return Err(Error::invalid(
            "baseline and RL results cover different categories",
        ));
    }
    let rows: Vec<DeltaRow> = baseline
        .iter()
        .zip(rl)
        .map(|(b, r)| DeltaRow {
            category: b.category,
            delta_psnr_db: r.mean_psnr_db - b.mean_psnr_db,
            delta_ssim: r.mean_ssim - b.mean_ssim,
            delta_lpips_proxy: r.mean_lpips_proxy - b.mean_lpips_proxy,
        })
        .collect();
    let psnr_wins = rows.iter().filter(|r| r.delta_psnr_db > 0.0).count();
    Ok(DeltaTable { rows, psnr_wins })
}

/// Fixed four-decimal formatting; negative zero prints as `0.0000`.
pub fn fmt4(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

pub fn format_table(results: &[CategoryResult]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.mode.name(),
            r.category,
            fmt4(r.mean_psnr_db),
            fmt4(r.mean_ssim),
            fmt4(r.mean_lpips_proxy),
            fmt4(r.mean_steps_used)
        );
    }
    out
}

pub fn format_deltas(deltas: &DeltaTable) -> String {
    let mut out = format!("{DELTAS_HEADER}\n");
    for d in &deltas.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            d.category,
            fmt4(d.delta_psnr_db),
            fmt4(d.delta_ssim),
            fmt4(d.delta_lpips_proxy),
            u8::from(d.delta_psnr_db > 0.0)
        );
    }
    out
}

/// One row per epoch; `mean_reward` is the smoothed episode reward.
pub fn format_curve(curve: &[CurvePoint]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for p in curve {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.epoch,
            fmt4(p.smoothed_reward),
            fmt4(p.policy_loss),
            fmt4(p.value_loss),
            fmt4(p.clip_fraction)
        );
    }
    out
}

/// Splits CSV text into rows of fields after checking the header. Errors
/// carry the byte offset of the offending line.
fn csv_rows<'a>(text: &'a str, header: &str, width: usize) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.split_inclusive('\n');
    let first = lines.next().unwrap_or("");
    if first.trim_end() != header {
        return Err(Error::parse(0, format!("expected header {header:?}")));
    }
    let mut offset = first.len();
    let mut rows = Vec::new();
    for line in lines {
        let start = offset;
        offset += line.len();
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::parse(
                start,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        rows.push((start, fields));
    }
    Ok(rows)
}

fn num(offset: usize, field: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::parse(offset, format!("not a number: {field:?}")))
}

fn category(offset: usize, field: &str) -> Result<SceneCategory> {
    field
        .parse()
        .map_err(|_| Error::parse(offset, format!("unknown category {field:?}")))
}

/// Parsed `table2_analog.csv` row: `(mode, category, psnr, ssim, lpips, steps)`.
pub type TableRow = (Mode, SceneCategory, f64, f64, f64, f64);

pub fn parse_table(text: &str) -> Result<Vec<TableRow>> {
    csv_rows(text, TABLE_HEADER, 6)?
        .into_iter()
        .map(|(off, f)| {
            let mode = Mode::parse(f[0])
                .ok_or_else(|| Error::parse(off, format!("unknown mode {:?}", f[0])))?;
            Ok((
                mode,
                category(off, f[1])?,
                num(off, f[2])?,
                num(off, f[3])?,
                num(off, f[4])?,
                num(off, f[5])?,
            ))
        })
        .collect()
}

pub fn parse_deltas(text: &str) -> Result<DeltaTable> {
    let rows = csv_rows(text, DELTAS_HEADER, 5)?
        .into_iter()
        .map(|(off, f)| {
            Ok(DeltaRow {
                category: category(off, f[0])?,
                delta_psnr_db: num(off, f[1])?,
                delta_ssim: num(off, f[2])?,
                delta_lpips_proxy: num(off, f[3])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let psnr_wins = rows.iter().filter(|r| r.delta_psnr_db > 0.0).count();
    Ok(DeltaTable { rows, psnr_wins })
}

/// Parsed `reward_curve.csv` row: `(epoch, mean_reward, policy_loss, value_loss, clip_fraction)`.
pub type CurveRow = (usize, f64, f64, f64, f64);

pub fn parse_curve(text: &str) -> Result<Vec<CurveRow>> {
    csv_rows(text, CURVE_HEADER, 5)?
        .into_iter()
        .map(|(off, f)| {
            let epoch = f[0]
                .parse()
                .map_err(|_| Error::parse(off, format!("bad epoch {:?}", f[0])))?;
            Ok((
                epoch,
                num(off, f[1])?,
                num(off, f[2])?,
                num(off, f[3])?,
                num(off, f[4])?,
            ))
        })
        .collect()
}

/// Writes `contents` to `path`, refusing to replace an existing file unless
/// `overwrite` is set.
pub fn write_output(path: &Path, contents: &[u8], overwrite: bool) -> Result<()> {
    if !overwrite && path.exists() {
        return Err(Error::config(format!(
            "{} already exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `table2_analog.csv`, plus `deltas.csv` and `reward_curve.csv` when
/// given. Returns the paths written.
pub fn write_reports(
    results: &[CategoryResult],
    deltas: Option<&DeltaTable>,
    curve: Option<&[CurvePoint]>,
    out_dir: &Path,
    overwrite: bool,
) -> Result<Vec<PathBuf>> {
    let mut files = vec![(out_dir.join("table2_analog.csv"), format_table(results))];
    if let Some(d) = deltas {
        files.push((out_dir.join("deltas.csv"), format_deltas(d)));
    }
    if let Some(c) = curve {
        files.push((out_dir.join("reward_curve.csv"), format_curve(c)));
    }
    if !overwrite {
        if let Some((path, _)) = files.iter().find(|(p, _)| p.exists()) {
            return Err(Error::config(format!(
                "{} already exists; pass --overwrite to replace it",
                path.display()
            )));
        }
    }
    for (path, text) in &files {
        write_output(path, text.as_bytes(), true)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
