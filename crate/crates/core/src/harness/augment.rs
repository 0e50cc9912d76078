//! Random crops, flips and quarter turns applied consistently to frames,
//! flows, occlusion maps and events.

use egmr_autograd::Tensor;
use rand::Rng;

use crate::error::{Error, Result};
use crate::synth::Sample;

/// An exact pixel-grid transform of a square or rectangular sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometric {
    HFlip,
    VFlip,
    /// Quarter turn counter-clockwise; needs a square sample.
    Rot90,
}

impl Geometric {
    /// New coordinates of old pixel `(x, y)` on an `h x w` grid.
    pub fn map(self, x: usize, y: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Geometric::HFlip => (w - 1 - x, y),
            Geometric::VFlip => (x, h - 1 - y),
            Geometric::Rot90 => (y, w - 1 - x),
        }
    }

    /// Old coordinates of new pixel `(x, y)` on the transformed grid.
    fn inverse(self, x: usize, y: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Geometric::HFlip => (w - 1 - x, y),
            Geometric::VFlip => (x, h - 1 - y),
            Geometric::Rot90 => (w - 1 - y, x),
        }
    }

    /// Displacement vector in the transformed frame.
    pub fn vector(self, dx: f32, dy: f32) -> (f32, f32) {
        match self {
            Geometric::HFlip => (-dx, dy),
            Geometric::VFlip => (dx, -dy),
            Geometric::Rot90 => (dy, -dx),
        }
    }

    fn out_dims(self, h: usize, w: usize) -> (usize, usize) {
        match self {
            Geometric::Rot90 => (w, h),
            _ => (h, w),
        }
    }

    /// Transforms every channel plane of a `... x H x W` tensor.
    pub fn apply_planes(self, t: &Tensor<f32>) -> Tensor<f32> {
        let s = t.shape();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let (oh, ow) = self.out_dims(h, w);
        let planes = t.numel() / (h * w);
        let mut out = vec![0.0; t.numel()];
        for p in 0..planes {
            let src = &t.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let (sx, sy) = self.inverse(x, y, h, w);
                    dst[y * ow + x] = src[sy * w + sx];
                }
            }
        }
        let mut shape = s.to_vec();
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        Tensor::from_vec(&shape, out)
    }

    /// Transforms a `... x 2k x H x W` tensor of `(x, y)` vector pairs.
    pub fn apply_vectors(self, t: &Tensor<f32>) -> Tensor<f32> {
        let moved = self.apply_planes(t);
        let s = moved.shape();
        let plane = s[s.len() - 2] * s[s.len() - 1];
        let pairs = moved.numel() / (2 * plane);
        let mut data = moved.data().to_vec();
        for k in 0..pairs {
            let base = 2 * k * plane;
            for i in 0..plane {
                let (vx, vy) = self.vector(data[base + i], data[base + plane + i]);
                data[base + i] = vx;
                data[base + plane + i] = vy;
            }
        }
        Tensor::from_vec(s, data)
    }

    pub fn apply(self, sample: &Sample) -> Result<Sample> {
        let (h, w) = (sample.height(), sample.width());
        if self == Geometric::Rot90 && h != w {
            return Err(Error::Shape(format!("quarter turn needs a square sample, got {h}x{w}")));
        }
        let (oh, ow) = self.out_dims(h, w);
        let occ = Tensor::from_vec(&[h, w], sample.occlusion.iter().map(|&v| v as f32).collect());
        Ok(Sample {
            i0: self.apply_planes(&sample.i0),
            i1: self.apply_planes(&sample.i1),
            igt: self.apply_planes(&sample.igt),
            tau: sample.tau,
            events: sample.events.map_coords(oh, ow, |x, y| Some(self.map(x, y, h, w))),
            flow: self.apply_vectors(&sample.flow),
            occlusion: self.apply_planes(&occ).data().iter().map(|&v| v as u8).collect(),
        })
    }
}

fn crop_planes(t: &Tensor<f32>, top: usize, left: usize, size: usize) -> Tensor<f32> {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = t.numel() / (h * w);
    let mut out = Vec::with_capacity(planes * size * size);
    for p in 0..planes {
        for y in top..top + size {
            let row = p * h * w + y * w;
            out.extend_from_slice(&t.data()[row + left..row + left + size]);
        }
    }
    let mut shape = s.to_vec();
    let r = shape.len();
    shape[r - 2] = size;
    shape[r - 1] = size;
    Tensor::from_vec(&shape, out)
}

/// Square crop; events outside the crop are dropped and the rest re-indexed.
pub fn crop(sample: &Sample, top: usize, left: usize, size: usize) -> Result<Sample> {
    let (h, w) = (sample.height(), sample.width());
    if top + size > h || left + size > w {
        return Err(Error::Parameter(format!("crop {size} at ({top}, {left}) exceeds {h}x{w}")));
    }
    let occ = Tensor::from_vec(&[h, w], sample.occlusion.iter().map(|&v| v as f32).collect());
    Ok(Sample {
        i0: crop_planes(&sample.i0, top, left, size),
        i1: crop_planes(&sample.i1, top, left, size),
        igt: crop_planes(&sample.igt, top, left, size),
        tau: sample.tau,
        events: sample.events.map_coords(size, size, |x, y| {
            let inside = (left..left + size).contains(&x) && (top..top + size).contains(&y);
            inside.then(|| (x - left, y - top))
        }),
        flow: crop_planes(&sample.flow, top, left, size),
        occlusion: crop_planes(&occ, top, left, size).data().iter().map(|&v| v as u8).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentConfig {
    pub crop: usize,
    pub flip: bool,
    pub rotate: bool,
}

/// Random crop followed by random flips and quarter turns.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Sample> {
    let (h, w) = (sample.height(), sample.width());
    let size = cfg.crop.min(h).min(w);
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    let mut s = crop(sample, top, left, size)?;
    if cfg.flip {
        if rng.random_bool(0.5) {
            s = Geometric::HFlip.apply(&s)?;
        }
        if rng.random_bool(0.5) {
            s = Geometric::VFlip.apply(&s)?;
        }
    }
    if cfg.rotate {
        for _ in 0..rng.random_range(0..4) {
            s = Geometric::Rot90.apply(&s)?;
        }
    }
    Ok(s)
}
