//! `camoseg` command-line harness.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use camoseg::config::TrainConfig;
use camoseg::dataset::{synth_generate, DatasetManifest, FileCheck, SynthConfig};
use camoseg::eval::{evaluate, write_report};
use camoseg::infer::{infer_image, Predictor};
use camoseg::report::report;
use camoseg::taxonomy::AttributeTaxonomy;
use camoseg::train::{train, TrainOptions};

/// Root for outputs whose `--out` is omitted.
const HOME_VAR: &str = "CAMOSEG_HOME";

#[derive(Parser)]
#[command(name = "camoseg", version, about = "Attribute- and fixation-guided camouflaged object segmentation")]
struct Cli {
    /// Attribute taxonomy file (`name = CATEGORY` per line); defaults to the built-in list.
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Toy,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from scratch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory [default: $CAMOSEG_HOME/runs/<config stem>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many optimiser steps.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Score a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory [default: $CAMOSEG_HOME/eval].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        batch: usize,
    },
    /// Predict mask, fixation and attributes for one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output directory [default: $CAMOSEG_HOME/infer/<image stem>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory [default: $CAMOSEG_HOME/synth].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Image side in pixels.
        #[arg(long, default_value_t = 64)]
        canvas: usize,
    },
    /// Tables and plots from an evaluation directory.
    Report {
        /// Directory written by `eval`.
        #[arg(long)]
        scores: PathBuf,
        /// Output directory [default: $CAMOSEG_HOME/report].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Manifest whose annotated attribute statistics are added.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print a preset configuration as TOML.
    Config {
        #[arg(long, value_enum, default_value_t = Preset::Full)]
        preset: Preset,
    },
}

fn out_dir(out: Option<PathBuf>, default: &[&str]) -> Result<PathBuf> {
    if let Some(o) = out {
        return Ok(o);
    }
    match std::env::var_os(HOME_VAR) {
        Some(home) => Ok(default.iter().fold(PathBuf::from(home), |p, s| p.join(s))),
        None => bail!("no --out given and {HOME_VAR} is not set"),
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

fn run(cli: Cli) -> Result<()> {
    let taxonomy = match &cli.taxonomy {
        Some(p) => AttributeTaxonomy::load(p).with_context(|| format!("loading taxonomy {}", p.display()))?,
        None => AttributeTaxonomy::default(),
    };
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            seed,
            max_steps,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if max_steps.is_some() {
                cfg.max_steps = max_steps;
            }
            let out = out_dir(out, &["runs", &stem(&config)])?;
            let manifest = DatasetManifest::load(&data, &taxonomy)?;
            log::info!("training on {} samples, config hash {}", manifest.len(), cfg.hash());
            let outcome = train(&cfg, &manifest, &taxonomy, &TrainOptions::new(&out))?;
            println!(
                "trained {} steps over {} epochs; checkpoint {}",
                outcome.checkpoint.step,
                outcome.checkpoint.epoch,
                outcome.checkpoint_path.display()
            );
        }
        Command::Eval { ckpt, data, out, batch } => {
            let out = out_dir(out, &["eval"])?;
            let predictor = Predictor::load(&ckpt)?;
            let manifest = DatasetManifest::load_with(&data, predictor.taxonomy(), FileCheck::Skip)?;
            let rep = evaluate(&predictor, &manifest, batch)?;
            write_report(&rep, &out)?;
            let s = &rep.summary;
            println!(
                "evaluated {} (skipped {}): S_alpha {:.4}  E_phi {:.4}  F_beta_w {:.4}  MAE {:.4}",
                s.evaluated, s.skipped, s.s_alpha, s.e_phi, s.f_beta_w, s.mae
            );
        }
        Command::Infer { ckpt, image, out } => {
            let out = out_dir(out, &["infer", &stem(&image)])?;
            let predictor = Predictor::load(&ckpt)?;
            infer_image(&predictor, &image, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Synth { n, seed, out, canvas } => {
            let out = out_dir(out, &["synth"])?;
            let cfg = SynthConfig {
                canvas,
                ..SynthConfig::default()
            };
            synth_generate(n, seed, &cfg, &taxonomy, &out)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Report { scores, out, data } => {
            let out = out_dir(out, &["report"])?;
            let manifest = match &data {
                Some(p) => Some(DatasetManifest::load_with(p, &taxonomy, FileCheck::Skip)?),
                None => None,
            };
            let files = report(&scores, &out, manifest.as_ref().map(|m| (m, &taxonomy)))?;
            println!("wrote {} files to {}", files.written.len(), out.display());
        }
        Command::Config { preset } => {
            let cfg = match preset {
                Preset::Full => TrainConfig::full_scale(),
                Preset::Toy => TrainConfig::toy(),
            };
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
