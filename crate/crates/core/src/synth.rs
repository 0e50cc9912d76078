//! Parametric moving-shape scenes, ground truth and a contrast-threshold
//! event simulator.

use std::fs;
use std::path::{Path, PathBuf};

use egmr_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{self, Event, EventStream};

/// Added to intensities before taking the log.
pub const LOG_EPS: f64 = 1e-4;
/// Default contrast threshold in log-intensity units.
pub const DEFAULT_THRESHOLD: f64 = 0.2;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Disk,
}

/// Per-axis polynomial of normalised time, lowest order first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

impl Trajectory {
    pub fn fixed(x: f64, y: f64) -> Self {
        Self { x: vec![x], y: vec![y] }
    }

    pub fn linear(x: f64, y: f64, dx: f64, dy: f64) -> Self {
        Self {
            x: vec![x, dx],
            y: vec![y, dy],
        }
    }

    pub fn at(&self, t: f64) -> (f64, f64) {
        (poly(&self.x, t), poly(&self.y, t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Half-extents `(x, y)` for rectangles; `size[0]` is the radius of a disk.
    pub size: [f64; 2],
    pub intensity: f32,
    /// Centre position in pixel coordinates (pixel `(i, j)` spans `[j, j+1) x [i, i+1)`).
    pub trajectory: Trajectory,
    /// Larger values are drawn on top.
    pub depth: i32,
}

impl ShapeSpec {
    fn contains(&self, cx: f64, cy: f64, x: f64, y: f64) -> bool {
        match self.kind {
            ShapeKind::Rectangle => (x - cx).abs() <= self.size[0] && (y - cy).abs() <= self.size[1],
            ShapeKind::Disk => (x - cx).powi(2) + (y - cy).powi(2) <= self.size[0] * self.size[0],
        }
    }

    fn half_extent(&self) -> (f64, f64) {
        match self.kind {
            ShapeKind::Rectangle => (self.size[0], self.size[1]),
            ShapeKind::Disk => (self.size[0], self.size[0]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: f32,
    pub shapes: Vec<ShapeSpec>,
    pub seed: u64,
}

/// Single-channel frame, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl GrayFrame {
    pub fn to_rgb(&self) -> Tensor<f32> {
        let mut data = Vec::with_capacity(3 * self.data.len());
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Tensor::from_vec(&[3, self.height, self.width], data)
    }

    pub fn inverted(&self, max: f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| max - v).collect(),
            ..self.clone()
        }
    }
}

/// One training/evaluation example.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `3 x H x W` in `[0, 1]`.
    pub i0: Tensor<f32>,
    pub i1: Tensor<f32>,
    pub igt: Tensor<f32>,
    pub tau: f64,
    pub events: EventStream,
    /// `4 x H x W`: F_{τ→0} (x, y) then F_{τ→1} (x, y), in pixels.
    pub flow: Tensor<f32>,
    /// `H x W`, 1 where the pixel at τ is hidden in either keyframe.
    pub occlusion: Vec<u8>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.i0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.i0.shape()[2]
    }
}

impl SceneSpec {
    fn draw_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.shapes.len()).collect();
        order.sort_by_key(|&i| (self.shapes[i].depth, i));
        order
    }

    /// Index of the top-most shape containing point `(x, y)` at time `t`.
    pub fn owner(&self, t: f64, x: f64, y: f64) -> Option<usize> {
        self.draw_order().into_iter().rev().find(|&i| {
            let s = &self.shapes[i];
            let (cx, cy) = s.trajectory.at(t);
            s.contains(cx, cy, x, y)
        })
    }

    /// Anti-aliased render at normalised time `t` (4x4 supersampling per pixel).
    pub fn render(&self, t: f64) -> GrayFrame {
        let (h, w) = (self.height, self.width);
        let mut data = vec![self.background; h * w];
        let n2 = (SUPERSAMPLE * SUPERSAMPLE) as f32;
        for i in self.draw_order() {
            let s = &self.shapes[i];
            let (cx, cy) = s.trajectory.at(t);
            let (ex, ey) = s.half_extent();
            let x_lo = ((cx - ex).floor().max(0.0) as usize).min(w);
            let x_hi = ((cx + ex).ceil() as isize + 1).clamp(0, w as isize) as usize;
            let y_lo = ((cy - ey).floor().max(0.0) as usize).min(h);
            let y_hi = ((cy + ey).ceil() as isize + 1).clamp(0, h as isize) as usize;
            for py in y_lo..y_hi {
                for px in x_lo..x_hi {
                    let mut hits = 0;
                    for sy in 0..SUPERSAMPLE {
                        for sx in 0..SUPERSAMPLE {
                            let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                            let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                            hits += s.contains(cx, cy, x, y) as usize;
                        }
                    }
                    if hits > 0 {
                        let cov = hits as f32 / n2;
                        let v = &mut data[py * w + px];
                        *v = cov * s.intensity + (1.0 - cov) * *v;
                    }
                }
            }
        }
        GrayFrame { height: h, width: w, data }
    }

    /// Shapes that never intersect the canvas during `[0, 1]`.
    pub fn offscreen_shapes(&self, n_times: usize) -> Vec<usize> {
        (0..self.shapes.len())
            .filter(|&i| {
                let s = &self.shapes[i];
                let (ex, ey) = s.half_extent();
                (0..=n_times).all(|k| {
                    let (cx, cy) = s.trajectory.at(k as f64 / n_times as f64);
                    cx + ex < 0.0
                        || cy + ey < 0.0
                        || cx - ex > self.width as f64
                        || cy - ey > self.height as f64
                })
            })
            .collect()
    }

    /// Analytic flow from `tau` to the keyframes and the occlusion map.
    pub fn ground_truth(&self, tau: f64) -> (Tensor<f32>, Vec<u8>) {
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        let mut flow = vec![0.0f32; 4 * plane];
        let mut occ = vec![0u8; plane];
        for py in 0..h {
            for px in 0..w {
                let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                let p = py * w + px;
                let owner = self.owner(tau, x, y);
                let (d0, d1) = match owner {
                    Some(k) => {
                        let tr = &self.shapes[k].trajectory;
                        let (xt, yt) = tr.at(tau);
                        let (x0, y0) = tr.at(0.0);
                        let (x1, y1) = tr.at(1.0);
                        ((x0 - xt, y0 - yt), (x1 - xt, y1 - yt))
                    }
                    None => ((0.0, 0.0), (0.0, 0.0)),
                };
                flow[p] = d0.0 as f32;
                flow[plane + p] = d0.1 as f32;
                flow[2 * plane + p] = d1.0 as f32;
                flow[3 * plane + p] = d1.1 as f32;
                let vis0 = self.owner(0.0, x + d0.0, y + d0.1) == owner;
                let vis1 = self.owner(1.0, x + d1.0, y + d1.1) == owner;
                occ[p] = (!(vis0 && vis1)) as u8;
            }
        }
        (Tensor::from_vec(&[4, h, w], flow), occ)
    }
}

/// Event simulator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSimConfig {
    pub threshold: f64,
    /// Standard deviation of per-event threshold jitter; 0 disables it.
    pub jitter_sigma: f64,
    pub t_end_us: u64,
    pub seed: u64,
}

impl Default for EventSimConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            jitter_sigma: 0.0,
            t_end_us: 10_000,
            seed: 0,
        }
    }
}

/// Ideal per-pixel contrast-threshold events between evenly spaced frames
/// spanning `[0, t_end_us]`.
pub fn simulate_events(frames: &[GrayFrame], cfg: &EventSimConfig) -> Result<EventStream> {
    if frames.len() < 2 {
        return Err(Error::Parameter("event simulation needs at least 2 frames".into()));
    }
    if !(cfg.threshold > 0.0) {
        return Err(Error::Parameter(format!("contrast threshold {} must be positive", cfg.threshold)));
    }
    let (h, w) = (frames[0].height, frames[0].width);
    if frames.iter().any(|f| f.height != h || f.width != w) {
        return Err(Error::Shape("frames differ in size".into()));
    }
    let jitter = if cfg.jitter_sigma > 0.0 {
        Some(Normal::new(cfg.threshold, cfg.jitter_sigma).map_err(|e| Error::Parameter(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = |rng: &mut ChaCha8Rng| match &jitter {
        Some(n) => n.sample(rng).max(0.01 * cfg.threshold),
        None => cfg.threshold,
    };
    let segments = frames.len() - 1;
    let dt = cfg.t_end_us as f64 / segments as f64;
    const EPS: f64 = 1e-9;
    let mut out = Vec::new();
    for p in 0..h * w {
        let (px, py) = ((p % w) as u16, (p / w) as u16);
        let log_at = |k: usize| (frames[k].data[p] as f64 + LOG_EPS).ln();
        let mut reference = log_at(0);
        let mut c_up = draw(&mut rng);
        let mut c_down = draw(&mut rng);
        for k in 0..segments {
            let (la, lb) = (log_at(k), log_at(k + 1));
            let t0 = k as f64 * dt;
            let mut emit = |level: f64, pol: i8| {
                let frac = ((level - la) / (lb - la)).clamp(0.0, 1.0);
                let t = (t0 + frac * dt).round().min(cfg.t_end_us as f64) as u64;
                out.push(Event::new(px, py, pol, t));
            };
            while lb - reference >= c_up - EPS {
                reference += c_up;
                emit(reference, 1);
                c_up = draw(&mut rng);
            }
            while reference - lb >= c_down - EPS {
                reference -= c_down;
                emit(reference, -1);
                c_down = draw(&mut rng);
            }
        }
    }
    out.sort_by_key(|e| e.t);
    EventStream::new(out, 0, cfg.t_end_us, h, w)
}

/// Output of [`render_sequence`].
#[derive(Clone, Debug)]
pub struct RenderedSequence {
    pub sample: Sample,
    /// Frames at `k / n_sub` for `k = 0..=n_sub`.
    pub frames: Vec<GrayFrame>,
    pub warnings: Vec<String>,
}

/// Renders keyframes, the ground-truth frame at `tau`, `n_sub + 1` evenly
/// spaced high-rate frames, and simulates the events between them.
pub fn render_sequence(
    spec: &SceneSpec,
    n_sub: usize,
    tau: f64,
    sim: &EventSimConfig,
) -> Result<RenderedSequence> {
    if n_sub < 8 {
        return Err(Error::Parameter(format!("need at least 8 substeps, got {n_sub}")));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Parameter(format!("tau {tau} outside (0, 1)")));
    }
    let frames: Vec<GrayFrame> = (0..=n_sub).map(|k| spec.render(k as f64 / n_sub as f64)).collect();
    let events = simulate_events(&frames, sim)?;
    let (flow, occlusion) = spec.ground_truth(tau);
    let warnings = spec
        .offscreen_shapes(n_sub)
        .into_iter()
        .map(|i| format!("shape {i} never enters the canvas"))
        .collect();
    let sample = Sample {
        i0: frames[0].to_rgb(),
        i1: frames[n_sub].to_rgb(),
        igt: spec.render(tau).to_rgb(),
        tau,
        events,
        flow,
        occlusion,
    };
    Ok(RenderedSequence {
        sample,
        frames,
        warnings,
    })
}

/// Random scene generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneDistribution {
    pub height: usize,
    pub width: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Half-extent range in pixels.
    pub min_size: f64,
    pub max_size: f64,
    /// Largest displacement over the clip, per axis, in pixels.
    pub max_motion: f64,
    /// Largest quadratic coefficient, per axis.
    pub max_curvature: f64,
    /// Minimum |shape - background| intensity difference.
    pub min_contrast: f32,
    /// Force the second shape to sweep across the first.
    pub occluding: bool,
    pub tau_choices: Vec<f64>,
    pub n_sub: usize,
    pub sim: EventSimConfig,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            min_shapes: 2,
            max_shapes: 3,
            min_size: 5.0,
            max_size: 12.0,
            max_motion: 8.0,
            max_curvature: 2.0,
            min_contrast: 0.25,
            occluding: false,
            tau_choices: vec![0.5],
            n_sub: 16,
            sim: EventSimConfig::default(),
        }
    }
}

impl SceneDistribution {
    pub fn sample_scene(&self, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let background: f32 = rng.random_range(0.15..0.85);
        let n = rng.random_range(self.min_shapes..=self.max_shapes.max(self.min_shapes));
        let (w, h) = (self.width as f64, self.height as f64);
        let mut shapes: Vec<ShapeSpec> = Vec::with_capacity(n);
        for i in 0..n {
            let kind = if rng.random_bool(0.5) { ShapeKind::Rectangle } else { ShapeKind::Disk };
            let size = [
                rng.random_range(self.min_size..=self.max_size),
                rng.random_range(self.min_size..=self.max_size),
            ];
            let intensity = loop {
                let v: f32 = rng.random_range(0.0..1.0);
                if (v - background).abs() >= self.min_contrast {
                    break v;
                }
            };
            let mut motion = || rng.random_range(-self.max_motion..=self.max_motion);
            let (dx, dy) = (motion(), motion());
            let (ax, ay) = (
                rng.random_range(-self.max_curvature..=self.max_curvature),
                rng.random_range(-self.max_curvature..=self.max_curvature),
            );
            let margin = self.max_size.min(w / 4.0);
            let (mut x0, mut y0) = (
                rng.random_range(margin..=(w - margin).max(margin)),
                rng.random_range(margin..=(h - margin).max(margin)),
            );
            let (mut dx, mut dy) = (dx, dy);
            if self.occluding && i == 1 {
                // Sweep across the first shape's mid-clip position.
                let (cx, cy) = shapes[0].trajectory.at(0.5);
                let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                dx = dir * self.max_motion;
                dy = rng.random_range(-0.25..=0.25) * self.max_motion;
                x0 = cx - dx / 2.0;
                y0 = cy - dy / 2.0;
            }
            // Keep the linear term as the net displacement over the clip.
            let trajectory = Trajectory {
                x: vec![x0, dx - ax, ax],
                y: vec![y0, dy - ay, ay],
            };
            shapes.push(ShapeSpec {
                kind,
                size,
                intensity,
                trajectory,
                depth: i as i32,
            });
        }
        SceneSpec {
            height: self.height,
            width: self.width,
            background,
            shapes,
            seed,
        }
    }

    pub fn sample_tau(&self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a75);
        if self.tau_choices.is_empty() {
            0.5
        } else {
            self.tau_choices[rng.random_range(0..self.tau_choices.len())]
        }
    }

    pub fn generate(&self, seed: u64) -> Result<RenderedSequence> {
        let spec = self.sample_scene(seed);
        let tau = self.sample_tau(seed);
        let sim = EventSimConfig {
            seed,
            ..self.sim.clone()
        };
        render_sequence(&spec, self.n_sub, tau, &sim)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleMeta {
    pub tau: f64,
    pub seed: u64,
    pub spec: SceneSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub distribution: SceneDistribution,
    pub samples: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_png(img: &Tensor<f32>, path: &Path) -> Result<()> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let plane = h * w;
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        for c in 0..3 {
            px.0[c] = (img.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    buf.save(path).map_err(|e| Error::decode(path, e))
}

pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::decode(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], data))
}

pub fn encode_flow(flow: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = (flow.shape()[1], flow.shape()[2]);
    let mut out = Vec::with_capacity(8 + 4 * flow.numel());
    out.extend_from_slice(b"FLW1");
    for d in [h, w] {
        let d = u16::try_from(d).map_err(|_| Error::Parameter(format!("flow dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in flow.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flow(bytes: &[u8]) -> Result<Tensor<f32>> {
    let fail = |offset: usize, message: &str| Error::Format {
        offset: offset as u64,
        message: message.into(),
    };
    if bytes.len() < 8 || &bytes[..4] != b"FLW1" {
        return Err(fail(0, "bad flow header"));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let want = 8 + 16 * h * w;
    if bytes.len() != want {
        return Err(fail(bytes.len().min(want), "flow payload length mismatch"));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::from_vec(&[4, h, w], data))
}

/// Writes one sample directory.
pub fn save_sample(sample: &Sample, meta: &SampleMeta, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_png(&sample.i0, &dir.join("I0.png"))?;
    save_png(&sample.i1, &dir.join("I1.png"))?;
    save_png(&sample.igt, &dir.join("Igt.png"))?;
    events::write_events(&sample.events, dir.join("events.evt1"))?;
    write_file(&dir.join("flow.bin"), &encode_flow(&sample.flow)?)?;
    write_file(&dir.join("occ.bin"), &sample.occlusion)?;
    let json = serde_json::to_vec_pretty(meta).map_err(|e| Error::decode(dir.join("meta.json"), e))?;
    write_file(&dir.join("meta.json"), &json)
}

/// Reads a sample directory written by [`save_sample`]. A missing `Igt.png`
/// yields `None` for the ground truth.
pub fn load_sample(dir: &Path) -> Result<(Sample, SampleMeta, bool)> {
    let meta_path = dir.join("meta.json");
    let meta_bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SampleMeta = serde_json::from_slice(&meta_bytes).map_err(|e| Error::decode(&meta_path, e))?;
    let i0 = load_png(&dir.join("I0.png"))?;
    let i1 = load_png(&dir.join("I1.png"))?;
    let gt_path = dir.join("Igt.png");
    let has_gt = gt_path.exists();
    let igt = if has_gt { load_png(&gt_path)? } else { Tensor::zeros(i0.shape()) };
    let events = events::read_events(dir.join("events.evt1"))?;
    let flow_path = dir.join("flow.bin");
    let flow = decode_flow(&fs::read(&flow_path).map_err(|e| Error::io(&flow_path, e))?)?;
    let occ_path = dir.join("occ.bin");
    let occlusion = fs::read(&occ_path).map_err(|e| Error::io(&occ_path, e))?;
    let sample = Sample {
        i0,
        i1,
        igt,
        tau: meta.tau,
        events,
        flow,
        occlusion,
    };
    Ok((sample, meta, has_gt))
}

/// Generates `n_samples` scenes into `out_dir` with a manifest. Per-sample seeds
/// are drawn from `seed`, so the dataset is fully reproducible.
pub fn make_dataset(n_samples: usize, dist: &SceneDistribution, seed: u64, out_dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let sample_seed: u64 = rng.random();
        let seq = dist.generate(sample_seed)?;
        let name = format!("sample_{i:04}");
        let meta = SampleMeta {
            tau: seq.sample.tau,
            seed: sample_seed,
            spec: dist.sample_scene(sample_seed),
        };
        save_sample(&seq.sample, &meta, &out_dir.join(&name))?;
        names.push(name);
    }
    let manifest = Manifest {
        version: 1,
        seed,
        distribution: dist.clone(),
        samples: names,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::decode(&path, e))?;
    write_file(&path, &json)?;
    Ok(manifest)
}

/// A dataset loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
    pub names: Vec<String>,
    /// Names of samples whose ground-truth frame was missing.
    pub missing_gt: Vec<String>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::decode(&path, e))?;
        let mut samples = Vec::new();
        let mut names = Vec::new();
        let mut missing_gt = Vec::new();
        for name in manifest.samples {
            let (sample, _, has_gt) = load_sample(&root.join(&name))?;
            if has_gt {
                samples.push(sample);
                names.push(name);
            } else {
                missing_gt.push(name);
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            samples,
            names,
            missing_gt,
        })
    }

    /// In-memory dataset straight from a distribution.
    pub fn generate(n_samples: usize, dist: &SceneDistribution, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(n_samples);
        let mut names = Vec::with_capacity(n_samples);
        for i in 0..n_samples {
            let s: u64 = rng.random();
            samples.push(dist.generate(s)?.sample);
            names.push(format!("sample_{i:04}"));
        }
        Ok(Self {
            root: PathBuf::new(),
            samples,
            names,
            missing_gt: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
