//! Image quality metrics on `[0, 1]` images scored in 0..255 units.

use egmr_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Returned for identical images.
pub const PSNR_CEILING: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const RANGE: f64 = 255.0;

fn check_same(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("images {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CEILING`].
pub fn psnr(reference: &Tensor<f32>, test: &Tensor<f32>) -> Result<f64> {
    check_same(reference, test)?;
    let n = reference.numel() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| ((a as f64 - b as f64) * RANGE).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CEILING);
    }
    Ok((10.0 * (RANGE * RANGE / mse).log10()).min(PSNR_CEILING))
}

fn gaussian_1d() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-region Gaussian filter of one plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over the valid window positions of each
/// channel, averaged over channels. Accepts `C x H x W` or `1 x C x H x W`.
pub fn ssim(reference: &Tensor<f32>, test: &Tensor<f32>) -> Result<f64> {
    check_same(reference, test)?;
    let s = reference.shape();
    if s.len() < 2 {
        return Err(Error::Shape(format!("image of shape {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Parameter(format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_1d();
    let (c1, c2) = ((K1 * RANGE).powi(2), (K2 * RANGE).powi(2));
    let plane = h * w;
    let channels = reference.numel() / plane;
    let mut total = 0.0;
    for c in 0..channels {
        let a: Vec<f64> = reference.data()[c * plane..(c + 1) * plane].iter().map(|&v| v as f64 * RANGE).collect();
        let b: Vec<f64> = test.data()[c * plane..(c + 1) * plane].iter().map(|&v| v as f64 * RANGE).collect();
        let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
        let mu_a = filter(&a, h, w, &g);
        let mu_b = filter(&b, h, w, &g);
        let aa = filter(&prod(&a, &a), h, w, &g);
        let bb = filter(&prod(&b, &b), h, w, &g);
        let ab = filter(&prod(&a, &b), h, w, &g);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / channels as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: Vec<SampleMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Samples skipped for lack of a ground-truth frame.
    pub skipped: Vec<String>,
}

impl MetricReport {
    pub fn from_samples(samples: Vec<SampleMetrics>, skipped: Vec<String>) -> Self {
        let n = samples.len().max(1) as f64;
        let mean_psnr = samples.iter().map(|s| s.psnr).sum::<f64>() / n;
        let mean_ssim = samples.iter().map(|s| s.ssim).sum::<f64>() / n;
        Self {
            samples,
            mean_psnr,
            mean_ssim,
            skipped,
        }
    }

    /// Line-oriented report: a versioned header, one JSON object per sample,
    /// then a summary line.
    pub fn to_lines(&self) -> String {
        let mut out = String::from("{\"format\":\"egmr-metrics\",\"version\":1}\n");
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).unwrap());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "count": self.samples.len(),
            "skipped": self.skipped,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}
