//! Command-line entry points.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::ablate::{run_ablation, AblationConfig};
use super::evaluate::{evaluate, write_report};
use super::train::{load_model, train, TrainConfig, LOG_FILE};
use crate::error::{Error, Result};
use crate::events::read_events;
use crate::pipeline::{interpolate_n, Variant};
use crate::synth::{load_png, make_dataset, save_png, Dataset, SceneDistribution};

#[derive(Debug, Parser)]
#[command(name = "egmr", about = "Event-guided video frame interpolation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long)]
        size: Option<usize>,
        /// Make the second shape sweep across the first.
        #[arg(long)]
        occluding: bool,
        /// Comma-separated interpolation times to draw from.
        #[arg(long, value_delimiter = ',')]
        tau: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Interpolate frames between two keyframes.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        i0: PathBuf,
        #[arg(long)]
        i1: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Comma-separated, strictly increasing times in (0, 1).
        #[arg(long, value_delimiter = ',', required = true)]
        tau: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and score component variants and attention mask sizes.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "A,B,C,D")]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        masks: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn train_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Executes a parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            out,
            samples,
            size,
            occluding,
            tau,
            common,
        } => {
            let mut dist = match &common.config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    toml::from_str(&text).map_err(|e| Error::decode(p, e))?
                }
                None => SceneDistribution::default(),
            };
            if let Some(s) = size {
                dist.height = s;
                dist.width = s;
            }
            dist.occluding |= occluding;
            if !tau.is_empty() {
                dist.tau_choices = tau;
            }
            let manifest = make_dataset(samples, &dist, common.seed.unwrap_or(0), &out)?;
            println!("wrote {} samples to {}", manifest.samples.len(), out.display());
        }
        Command::Train { data, out, steps, common } => {
            let mut cfg = train_config(&common)?;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if data.is_some() {
                cfg.dataset = data;
            }
            let path = cfg
                .dataset
                .clone()
                .ok_or_else(|| Error::Parameter("no dataset given (--data or `dataset` in the config)".into()))?;
            cfg.out_dir = Some(out.clone());
            let dataset = Dataset::load(&path)?;
            let outcome = train(&cfg, &dataset)?;
            if let Some(last) = outcome.log.last() {
                println!("step {} loss {:.4}", last.step, last.total);
            }
            println!("checkpoint and {LOG_FILE} written to {}", out.display());
        }
        Command::Interpolate {
            checkpoint,
            i0,
            i1,
            events,
            tau,
            out,
            common: _,
        } => {
            let model = load_model(&checkpoint)?;
            let (a, b) = (load_png(&i0)?, load_png(&i1)?);
            let ev = read_events(&events)?;
            let frames = interpolate_n(&model, &a, &b, &ev, &tau)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for (k, f) in frames.iter().enumerate() {
                save_png(f, &out.join(format!("frame_{k:04}.png")))?;
            }
            println!("wrote {} frames to {}", frames.len(), out.display());
        }
        Command::Evaluate {
            checkpoint,
            data,
            report,
            common: _,
        } => {
            let model = load_model(&checkpoint)?;
            let dataset = Dataset::load(&data)?;
            let r = evaluate(&model, &dataset)?;
            if let Some(p) = report {
                write_report(&r, &p)?;
            }
            println!("mean PSNR {:.3} dB, mean SSIM {:.4} over {} samples", r.mean_psnr, r.mean_ssim, r.samples.len());
        }
        Command::Ablate {
            data,
            out,
            variants,
            masks,
            seeds,
            steps,
            common,
        } => {
            let mut base = train_config(&common)?;
            if let Some(s) = steps {
                base.steps = s;
            }
            let variants = variants
                .iter()
                .map(|v| Variant::parse(v).ok_or_else(|| Error::Parameter(format!("unknown variant {v}"))))
                .collect::<Result<Vec<_>>>()?;
            let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds };
            let dataset = Dataset::load(&data)?;
            let report = run_ablation(
                &AblationConfig {
                    base,
                    variants,
                    masks,
                    seeds,
                },
                &dataset,
            )?;
            let table = report.table();
            print!("{table}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_text(&dir.join("ablation.txt"), &table)?;
                let json = serde_json::to_string_pretty(&report).map_err(|e| Error::decode(&dir, e))?;
                write_text(&dir.join("ablation.json"), &json)?;
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Usage errors exit with 2, runtime failures with 1.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
