//! Scoring an interpolator against a dataset's ground-truth frames.

use std::fs;
use std::path::Path;

use egmr_autograd::Tensor;

use super::metrics::{psnr, ssim, MetricReport, SampleMetrics};
use crate::error::{Error, Result};
use crate::pipeline::{forward, EgmrModel};
use crate::synth::{Dataset, Sample};

/// Anything that predicts the frame at a sample's τ as `3 x H x W` in `[0, 1]`.
pub trait Interpolator {
    fn interpolate(&self, sample: &Sample) -> Result<Tensor<f32>>;
}

impl Interpolator for EgmrModel {
    fn interpolate(&self, sample: &Sample) -> Result<Tensor<f32>> {
        Ok(forward(self, &sample.i0, &sample.i1, &sample.events, sample.tau)?.output)
    }
}

/// Per-sample and mean PSNR / SSIM. Samples without ground truth (listed in
/// `data.missing_gt`) are reported as skipped.
pub fn evaluate(model: &dyn Interpolator, data: &Dataset) -> Result<MetricReport> {
    let mut rows = Vec::with_capacity(data.len());
    for (sample, name) in data.samples.iter().zip(&data.names) {
        let pred = model.interpolate(sample)?;
        let pred = pred.reshape(sample.igt.shape());
        rows.push(SampleMetrics {
            name: name.clone(),
            psnr: psnr(&sample.igt, &pred)?,
            ssim: ssim(&sample.igt, &pred)?,
        });
    }
    for name in &data.missing_gt {
        eprintln!("warning: {name} has no ground-truth frame; skipped");
    }
    Ok(MetricReport::from_samples(rows, data.missing_gt.clone()))
}

pub fn write_report(report: &MetricReport, path: &Path) -> Result<()> {
    fs::write(path, report.to_lines()).map_err(|e| Error::io(path, e))
}
