use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use orl_core::config::{RunConfig, SEED_ENV};
use orl_core::pipeline;

/// RL-guided latent diffusion super-resolution at desk scale.
#[derive(Parser)]
#[command(name = "orl-ldm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic scene corpus and its manifest.
    GenData(Common),
    /// Train the noise-prediction denoiser on the training split.
    Pretrain(Common),
    /// Train the step-control policy with PPO against the frozen denoiser.
    TrainRl(Common),
    /// Score baseline (and, with --policy, guided) sampling on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Agent checkpoint written by train-rl.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; overrides ORL_SEED and the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long)]
    overwrite: bool,
    /// Worker threads for evaluation.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let env_seed = std::env::var(SEED_ENV).ok();
        cfg.override_seed(env_seed.as_deref(), self.seed)?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = c.resolve()?;
            let manifest = pipeline::gen_data(&cfg, c.overwrite).context("gen-data failed")?;
            println!("wrote {}", manifest.display());
        }
        Command::Pretrain(c) => {
            let cfg = c.resolve()?;
            let loss =
                pipeline::pretrain(&cfg, c.overwrite, &mut log).context("pretrain failed")?;
            println!(
                "wrote {} (final smoothed loss {loss:.4})",
                pipeline::pretrain_dir(&cfg)
                    .join(pipeline::DENOISER_FILE)
                    .display()
            );
        }
        Command::TrainRl(c) => {
            let cfg = c.resolve()?;
            let curve =
                pipeline::train_rl(&cfg, c.overwrite, &mut log).context("train-rl failed")?;
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                println!("smoothed reward {first:.4} -> {last:.4}");
            }
            println!("wrote {}", pipeline::default_policy_path(&cfg).display());
        }
        Command::Evaluate { common: c, policy } => {
            let cfg = c.resolve()?;
            let summary = pipeline::evaluate_stage(
                &cfg,
                policy.as_deref(),
                c.threads as usize,
                c.overwrite,
                &mut log,
            )
            .context("evaluate failed")?;
            println!("baseline composite {:.4}", summary.baseline_composite);
            if let (Some(rl), Some(wins)) = (summary.rl_composite, summary.psnr_wins) {
                println!("rl composite {rl:.4}, PSNR wins {wins}/8");
            }
            println!("wrote {}", pipeline::report_dir(&cfg).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
