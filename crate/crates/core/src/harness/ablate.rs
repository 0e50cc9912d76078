//! Component ablation grid and attention mask-size sweep.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::evaluate::evaluate;
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::pipeline::Variant;
use crate::synth::Dataset;

#[derive(Clone, Debug)]
pub struct AblationConfig {
    /// Settings shared by every run; variant and mask size are overridden.
    pub base: TrainConfig,
    pub variants: Vec<Variant>,
    pub masks: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub mask_size: usize,
    pub runs: Vec<RunResult>,
    pub median_psnr: f64,
    pub median_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<AblationRow>,
    pub masks: Vec<AblationRow>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains and evaluates one configuration over all seeds.
pub fn run_row(base: &TrainConfig, variant: Variant, mask_size: usize, seeds: &[u64], data: &Dataset) -> Result<AblationRow> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.out_dir = None;
        cfg.model = cfg.model.with_variant(variant);
        cfg.model.mask_size = mask_size;
        let outcome = train(&cfg, data)?;
        let report = evaluate(&outcome.model, data)?;
        runs.push(RunResult {
            seed,
            psnr: report.mean_psnr,
            ssim: report.mean_ssim,
        });
    }
    let psnrs: Vec<f64> = runs.iter().map(|r| r.psnr).collect();
    let ssims: Vec<f64> = runs.iter().map(|r| r.ssim).collect();
    Ok(AblationRow {
        variant,
        mask_size,
        median_psnr: median(&psnrs),
        median_ssim: median(&ssims),
        runs,
    })
}

/// Runs every variant at the base mask size, then the full model at every mask size.
pub fn run_ablation(cfg: &AblationConfig, data: &Dataset) -> Result<AblationReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Parameter("ablation needs at least one seed".into()));
    }
    let mut report = AblationReport::default();
    for &v in &cfg.variants {
        report.variants.push(run_row(&cfg.base, v, cfg.base.model.mask_size, &cfg.seeds, data)?);
    }
    for &m in &cfg.masks {
        report.masks.push(run_row(&cfg.base, Variant::D, m, &cfg.seeds, data)?);
    }
    Ok(report)
}

fn mark(on: bool) -> &'static str {
    if on {
        "yes"
    } else {
        "-"
    }
}

impl AblationReport {
    /// Plain-text tables: one row per variant, then one row per mask size.
    pub fn table(&self) -> String {
        let mut out = String::new();
        if !self.variants.is_empty() {
            writeln!(out, "{:<8} {:>4} {:>5} {:>9} {:>7}", "variant", "EGA", "C2SA", "PSNR", "SSIM").unwrap();
            for r in &self.variants {
                writeln!(
                    out,
                    "{:<8} {:>4} {:>5} {:>9.3} {:>7.4}",
                    r.variant.label(),
                    mark(r.variant.edge_guided()),
                    mark(r.variant.cross_space()),
                    r.median_psnr,
                    r.median_ssim
                )
                .unwrap();
            }
        }
        if !self.masks.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            writeln!(out, "{:<8} {:>9} {:>7}", "mask", "PSNR", "SSIM").unwrap();
            for r in &self.masks {
                let label = format!("{0}x{0}", r.mask_size);
                writeln!(out, "{:<8} {:>9.3} {:>7.4}", label, r.median_psnr, r.median_ssim).unwrap();
            }
        }
        out
    }
}
