//! The four on-disk pipeline stages. Every stage writes under its own
//! directory of `RunConfig::out_dir` and echoes its effective configuration
//! to `config_resolved.txt` there.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::codec::Image;
use crate::config::RunConfig;
use crate::diffusion::{train_denoiser, Denoiser};
use crate::env::DiffusionEnv;
use crate::error::{Error, Result};
use crate::ppo::{load_agent, save_agent, train_with, GaussianPolicy};
use crate::report::{
    compare, evaluate, fmt4, overall_composite, write_output, write_reports, Mode,
};
use crate::scenes::{
    build_corpus, format_manifest, load_pgm, parse_manifest, save_pgm, ManifestRow, ScenePair,
    Split,
};

pub const RESOLVED_CONFIG: &str = "config_resolved.txt";
pub const MANIFEST: &str = "manifest.csv";
pub const DENOISER_FILE: &str = "denoiser.orlm";
pub const LOSS_FILE: &str = "pretrain_loss.csv";
pub const POLICY_FILE: &str = "policy.orlm";
pub const CURVE_FILE: &str = "reward_curve.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Progress messages from long-running stages.
pub type Log<'a> = &'a mut dyn FnMut(&str);

pub fn data_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("data")
}

pub fn pretrain_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("pretrain")
}

pub fn rl_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("rl")
}

pub fn report_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("report")
}

pub fn default_policy_path(cfg: &RunConfig) -> PathBuf {
    rl_dir(cfg).join(POLICY_FILE)
}

fn refuse_existing(paths: &[PathBuf], overwrite: bool) -> Result<()> {
    if overwrite {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::config(format!(
            "{} already exists; pass --overwrite to replace it",
            p.display()
        ))),
        None => Ok(()),
    }
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_output(&dir.join(RESOLVED_CONFIG), cfg.to_text().as_bytes(), true)
}

/// Generates the corpus as PGM files plus a manifest with paths relative to
/// the data directory. Returns the manifest path.
pub fn gen_data(cfg: &RunConfig, overwrite: bool) -> Result<PathBuf> {
    let corpus = build_corpus(cfg.images_per_category, cfg.seed, &cfg.corpus())?;
    let dir = data_dir(cfg);
    let manifest_path = dir.join(MANIFEST);
    refuse_existing(
        &[manifest_path.clone(), dir.join(RESOLVED_CONFIG)],
        overwrite,
    )?;
    for sub in ["hr", "lr"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rows = Vec::new();
    for (split, pairs) in [(Split::Train, &corpus.train), (Split::Test, &corpus.test)] {
        for pair in pairs {
            let name = format!("{}_{}.pgm", pair.category, pair.seed);
            let row = ManifestRow {
                category: pair.category,
                seed: pair.seed,
                split,
                hr_path: Path::new("hr").join(&name),
                lr_path: Path::new("lr").join(&name),
            };
            save_pgm(&pair.hr, &dir.join(&row.hr_path))?;
            save_pgm(&pair.lr, &dir.join(&row.lr_path))?;
            rows.push(row);
        }
    }
    write_output(&manifest_path, format_manifest(&rows).as_bytes(), true)?;
    echo_config(cfg, &dir)?;
    Ok(manifest_path)
}

/// Loads one split of the on-disk corpus.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<ScenePair>> {
    let dir = data_dir(cfg);
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::config(format!(
            "corpus manifest {} not found; run gen-data first",
            manifest_path.display()
        )));
    }
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let pairs = parse_manifest(&text)?
        .into_iter()
        .filter(|r| r.split == split)
        .map(|r| {
            Ok(ScenePair {
                hr: load_pgm(&dir.join(&r.hr_path))?,
                lr: load_pgm(&dir.join(&r.lr_path))?,
                category: r.category,
                seed: r.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if pairs.is_empty() {
        return Err(Error::config(format!(
            "{} lists no {} scenes",
            manifest_path.display(),
            split.name()
        )));
    }
    Ok(pairs)
}

fn pair_refs(pairs: &[ScenePair]) -> Vec<(&Image, &Image)> {
    pairs.iter().map(|p| (&p.hr, &p.lr)).collect()
}

fn load_denoiser(cfg: &RunConfig) -> Result<Denoiser> {
    let path = pretrain_dir(cfg).join(DENOISER_FILE);
    if !path.is_file() {
        return Err(Error::config(format!(
            "denoiser checkpoint {} not found; run pretrain first",
            path.display()
        )));
    }
    Denoiser::load(&path)
}

/// Trains the denoiser on the training split; writes the checkpoint and a
/// per-step loss CSV. Returns the final smoothed loss.
pub fn pretrain(cfg: &RunConfig, overwrite: bool, log: Log) -> Result<f64> {
    let dir = pretrain_dir(cfg);
    let ckpt = dir.join(DENOISER_FILE);
    let loss_path = dir.join(LOSS_FILE);
    refuse_existing(
        &[ckpt.clone(), loss_path.clone(), dir.join(RESOLVED_CONFIG)],
        overwrite,
    )?;
    let train = load_split(cfg, Split::Train)?;
    let schedule = cfg.env().schedule()?;
    log(&format!(
        "pretraining denoiser on {} scenes for {} steps",
        train.len(),
        cfg.denoiser_steps
    ));
    let trained = train_denoiser(&pair_refs(&train), &schedule, &cfg.denoiser())?;
    let smoothed = trained.smoothed_losses(cfg.loss_smoothing_window);
    let mut csv = String::from("step,loss,smoothed_loss\n");
    for (i, (loss, s)) in trained.loss_history.iter().zip(&smoothed).enumerate() {
        let _ = writeln!(csv, "{},{},{}", i + 1, fmt4(*loss), fmt4(*s));
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    trained.denoiser.save(&ckpt)?;
    write_output(&loss_path, csv.as_bytes(), true)?;
    echo_config(cfg, &dir)?;
    let last = smoothed.last().copied().unwrap_or(f64::NAN);
    log(&format!("final smoothed loss {}", fmt4(last)));
    Ok(last)
}

/// Runs PPO against the frozen denoiser; writes the agent checkpoint and
/// the reward curve. Returns the curve's smoothed rewards.
pub fn train_rl(cfg: &RunConfig, overwrite: bool, log: Log) -> Result<Vec<f64>> {
    let dir = rl_dir(cfg);
    let ckpt = dir.join(POLICY_FILE);
    let curve_path = dir.join(CURVE_FILE);
    refuse_existing(
        &[ckpt.clone(), curve_path.clone(), dir.join(RESOLVED_CONFIG)],
        overwrite,
    )?;
    let denoiser = load_denoiser(cfg)?;
    let train = load_split(cfg, Split::Train)?;
    let mut env = DiffusionEnv::new(cfg.env(), Some(denoiser), &pair_refs(&train))?;
    let out = train_with(&mut env, &cfg.ppo(), &mut |p| {
        if p.epoch % 10 == 0 || p.epoch + 1 == cfg.train_epochs {
            log(&format!(
                "epoch {:>4}  reward {}  smoothed {}  clip {}",
                p.epoch,
                fmt4(p.mean_reward),
                fmt4(p.smoothed_reward),
                fmt4(p.clip_fraction)
            ));
        }
    })?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    save_agent(&out.policy, &out.value, &ckpt)?;
    write_output(
        &curve_path,
        crate::report::format_curve(&out.curve).as_bytes(),
        true,
    )?;
    echo_config(cfg, &dir)?;
    Ok(out.curve.iter().map(|p| p.smoothed_reward).collect())
}

/// Mean composite reward per evaluated mode.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSummary {
    pub baseline_composite: f64,
    pub rl_composite: Option<f64>,
    pub psnr_wins: Option<usize>,
}

/// Evaluates the baseline and, with a policy checkpoint, the guided sampler
/// on the held-out split. Writes `table2_analog.csv`, `summary.csv` and,
/// with a policy, `deltas.csv`.
pub fn evaluate_stage(
    cfg: &RunConfig,
    policy_path: Option<&Path>,
    threads: usize,
    overwrite: bool,
    log: Log,
) -> Result<EvaluationSummary> {
    let dir = report_dir(cfg);
    let mut outputs = vec![
        dir.join("table2_analog.csv"),
        dir.join(SUMMARY_FILE),
        dir.join(RESOLVED_CONFIG),
    ];
    if policy_path.is_some() {
        outputs.push(dir.join("deltas.csv"));
    }
    refuse_existing(&outputs, overwrite)?;
    let denoiser = load_denoiser(cfg)?;
    let policy: Option<GaussianPolicy> = match policy_path {
        Some(p) if !p.is_file() => {
            return Err(Error::config(format!(
                "policy checkpoint {} not found",
                p.display()
            )))
        }
        Some(p) => Some(load_agent(p)?.0),
        None => None,
    };
    let test = load_split(cfg, Split::Test)?;
    let env_cfg = cfg.env();
    log(&format!("evaluating {} held-out scenes", test.len()));
    let baseline = evaluate(&denoiser, None, &test, cfg.seed, &env_cfg, threads)?;
    let mut rows = baseline.clone();
    let mut summary_csv = format!(
        "mode,mean_composite\n{},{}\n",
        Mode::Baseline.name(),
        fmt4(overall_composite(&baseline))
    );
    let mut summary = EvaluationSummary {
        baseline_composite: overall_composite(&baseline),
        rl_composite: None,
        psnr_wins: None,
    };
    let deltas = match &policy {
        Some(policy) => {
            let rl = evaluate(&denoiser, Some(policy), &test, cfg.seed, &env_cfg, threads)?;
            let deltas = compare(&baseline, &rl)?;
            let composite = overall_composite(&rl);
            let _ = writeln!(summary_csv, "{},{}", Mode::Rl.name(), fmt4(composite));
            summary.rl_composite = Some(composite);
            summary.psnr_wins = Some(deltas.psnr_wins);
            rows.extend(rl);
            Some(deltas)
        }
        None => None,
    };
    write_reports(&rows, deltas.as_ref(), None, &dir, true)?;
    write_output(&dir.join(SUMMARY_FILE), summary_csv.as_bytes(), true)?;
    echo_config(cfg, &dir)?;
    Ok(summary)
}
